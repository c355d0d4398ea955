//! Benchmark configurations with closed-form manufactured solutions.
//!
//! All solution branches are globally defined formulas, so each side's
//! branch doubles as its own smooth extension across the interface.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assembly::StabParams;
use crate::cutgeom::{LevelSet, Side};
use crate::error::{Error, Result};
use crate::mesh::Rect;
use crate::Vec2;

/// A rectangle with an optional rectangular hole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub outer: Rect,
    pub hole: Option<Rect>,
}

impl Region {
    pub fn rect(outer: Rect) -> Self {
        Self { outer, hole: None }
    }

    pub fn difference(outer: Rect, hole: Rect) -> Self {
        Self { outer, hole: Some(hole) }
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        self.outer.contains(p) && !self.hole.is_some_and(|h| strictly_inside(&h, p))
    }

    pub fn area(&self) -> f64 {
        self.outer.area() - self.hole.map_or(0.0, |h| h.area())
    }

    /// Rectangles whose edges bound the region, for mesh alignment.
    pub fn boxes(&self) -> Vec<Rect> {
        std::iter::once(self.outer).chain(self.hole).collect()
    }

    /// Points sampled along the region's boundary, `per_edge` per edge.
    pub fn boundary_samples(&self, per_edge: usize) -> Vec<Vec2> {
        let mut out = Vec::new();
        for r in self.boxes() {
            let c = r.corners();
            for k in 0..4 {
                let (a, b) = (c[k], c[(k + 1) % 4]);
                for i in 0..per_edge {
                    let p = a + (b - a) * (i as f64 / per_edge as f64);
                    if self.outer.contains(&p) && !self.hole.is_some_and(|h| strictly_inside(&h, &p)) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

fn strictly_inside(r: &Rect, p: &Vec2) -> bool {
    p.x > r.x0 && p.x < r.x1 && p.y > r.y0 && p.y < r.y1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CatalogId {
    DiffusionL4,
    HelmholtzL4Box,
    HelmholtzL4Convex,
}

impl CatalogId {
    pub const ALL: [CatalogId; 3] = [CatalogId::DiffusionL4, CatalogId::HelmholtzL4Box, CatalogId::HelmholtzL4Convex];

    pub fn as_str(&self) -> &'static str {
        match self {
            CatalogId::DiffusionL4 => "diffusion-l4",
            CatalogId::HelmholtzL4Box => "helmholtz-l4-box",
            CatalogId::HelmholtzL4Convex => "helmholtz-l4-convex",
        }
    }
}

impl fmt::Display for CatalogId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CatalogId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CatalogId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown problem id '{s}' (expected diffusion-l4, helmholtz-l4-box or helmholtz-l4-convex)")))
    }
}

/// Manufactured solutions for the `‖x‖₄` interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactSolution {
    /// Cosine profile inside, scaled `‖x‖₄` outside; kink for `μ₁ ≠ μ₂`.
    Diffusion { mu: [f64; 2] },
    /// `C₁ cos(k₁ s) + C₂` inside and `sin(k₂ s)` outside, `s = x⁴ + y⁴`.
    Helmholtz { mu: [f64; 2], k: [f64; 2], c1: f64, c2: f64 },
    /// `c₀ + c₁x + c₂y + c₃x² + c₄xy + c₅y²` on both sides with a common
    /// diffusion coefficient; reproduced exactly by quadratic elements.
    Quadratic { mu: f64, c: [f64; 6] },
}

fn quartic(p: &Vec2) -> (f64, Vec2, f64, f64) {
    let (x, y) = (p.x, p.y);
    let s = x.powi(4) + y.powi(4);
    let grad = Vec2::new(4.0 * x.powi(3), 4.0 * y.powi(3));
    let lap = 12.0 * (x * x + y * y);
    let grad_sq = 16.0 * (x.powi(6) + y.powi(6));
    (s, grad, lap, grad_sq)
}

impl ExactSolution {
    pub fn diffusion(mu: [f64; 2]) -> Self {
        ExactSolution::Diffusion { mu }
    }

    pub fn helmholtz(mu: [f64; 2], k: [f64; 2]) -> Self {
        let c1 = -(k[1] * mu[1]) / (k[0] * mu[0]) * k[1].cos() / k[0].sin();
        let c2 = k[1].sin() - c1 * k[0].cos();
        ExactSolution::Helmholtz { mu, k, c1, c2 }
    }

    pub fn rho(&self) -> [f64; 2] {
        match self {
            ExactSolution::Diffusion { .. } => [0.0, 0.0],
            ExactSolution::Helmholtz { k, .. } => [k[0] * k[0], k[1] * k[1]],
            ExactSolution::Quadratic { .. } => [0.0, 0.0],
        }
    }

    pub fn mu(&self) -> [f64; 2] {
        match self {
            ExactSolution::Diffusion { mu } | ExactSolution::Helmholtz { mu, .. } => *mu,
            ExactSolution::Quadratic { mu, .. } => [*mu, *mu],
        }
    }

    pub fn value(&self, side: Side, p: &Vec2) -> f64 {
        let (s, ..) = quartic(p);
        match (self, side) {
            (ExactSolution::Diffusion { mu }, Side::Neg) => (1.0 + PI * mu[0] / mu[1]) / SQRT_2 - (PI * s / 4.0).cos(),
            (ExactSolution::Diffusion { mu }, Side::Pos) => mu[0] * PI / (mu[1] * SQRT_2) * s.powf(0.25),
            (ExactSolution::Helmholtz { k, c1, c2, .. }, Side::Neg) => c1 * (k[0] * s).cos() + c2,
            (ExactSolution::Helmholtz { k, .. }, Side::Pos) => (k[1] * s).sin(),
            (ExactSolution::Quadratic { c, .. }, _) => {
                c[0] + c[1] * p.x + c[2] * p.y + c[3] * p.x * p.x + c[4] * p.x * p.y + c[5] * p.y * p.y
            }
        }
    }

    pub fn gradient(&self, side: Side, p: &Vec2) -> Vec2 {
        let (s, gs, ..) = quartic(p);
        match (self, side) {
            (ExactSolution::Diffusion { .. }, Side::Neg) => gs * (PI / 4.0 * (PI * s / 4.0).sin()),
            (ExactSolution::Diffusion { mu }, Side::Pos) => {
                if s == 0.0 {
                    return Vec2::zeros();
                }
                // ∇‖x‖₄ = (x³, y³) s^{-3/4}
                gs * (mu[0] * PI / (mu[1] * SQRT_2) * 0.25 * s.powf(-0.75))
            }
            (ExactSolution::Helmholtz { k, c1, .. }, Side::Neg) => gs * (-c1 * k[0] * (k[0] * s).sin()),
            (ExactSolution::Helmholtz { k, .. }, Side::Pos) => gs * (k[1] * (k[1] * s).cos()),
            (ExactSolution::Quadratic { c, .. }, _) => {
                Vec2::new(c[1] + 2.0 * c[3] * p.x + c[4] * p.y, c[2] + c[4] * p.x + 2.0 * c[5] * p.y)
            }
        }
    }

    pub fn laplacian(&self, side: Side, p: &Vec2) -> Result<f64> {
        let (s, _, lap_s, gs_sq) = quartic(p);
        Ok(match (self, side) {
            (ExactSolution::Diffusion { .. }, Side::Neg) => {
                let a = PI * s / 4.0;
                let (x, y) = (p.x, p.y);
                PI * PI * a.cos() * (x.powi(6) + y.powi(6)) + 3.0 * PI * a.sin() * (x * x + y * y)
            }
            (ExactSolution::Diffusion { mu }, Side::Pos) => {
                if s == 0.0 {
                    return Err(Error::Domain(format!("outer diffusion branch is singular at ({}, {})", p.x, p.y)));
                }
                let (x, y) = (p.x, p.y);
                let lap_r = 3.0 * (x * x + y * y) * s.powf(-0.75) - 3.0 * (x.powi(6) + y.powi(6)) * s.powf(-1.75);
                mu[0] * PI / (mu[1] * SQRT_2) * lap_r
            }
            (ExactSolution::Helmholtz { k, c1, .. }, Side::Neg) => {
                -c1 * k[0] * ((k[0] * s).cos() * k[0] * gs_sq + (k[0] * s).sin() * lap_s)
            }
            (ExactSolution::Helmholtz { k, .. }, Side::Pos) => {
                -k[1] * k[1] * (k[1] * s).sin() * gs_sq + k[1] * (k[1] * s).cos() * lap_s
            }
            (ExactSolution::Quadratic { c, .. }, _) => 2.0 * (c[3] + c[5]),
        })
    }

    /// `f_i = −μ_i Δu_i − ρ_i u_i`.
    pub fn source(&self, side: Side, p: &Vec2) -> Result<f64> {
        let i = side.index();
        Ok(-self.mu()[i] * self.laplacian(side, p)? - self.rho()[i] * self.value(side, p))
    }
}

/// Data perturbation settings: `δ = δ̃ h^{p−θ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub delta_tilde: f64,
    pub theta: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { delta_tilde: 0.0, theta: 0.0, seed: 0 }
    }
}

/// Fully specified benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub id: CatalogId,
    pub mu: [f64; 2],
    pub rho: [f64; 2],
    pub levelset: LevelSet,
    pub domain: Rect,
    pub data: Region,
    pub target: Region,
    /// Side containing the data domain.
    pub data_side: Side,
    pub solution: ExactSolution,
    pub stab: StabParams,
    pub noise: NoiseParams,
    pub p: usize,
    pub q: usize,
    /// Subdivisions per axis of the coarsest mesh.
    pub base_n: usize,
}

/// Optional changes applied on top of a catalog entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub mu: Option<[f64; 2]>,
    pub k: Option<[f64; 2]>,
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub base_n: Option<usize>,
    pub stab: Option<StabParams>,
    pub noise: Option<NoiseParams>,
}

/// Catalog lookup with overrides.
pub fn make_problem(id: CatalogId, overrides: &Overrides) -> Result<ProblemSpec> {
    let levelset = LevelSet::Norm { ell: 4 };
    let domain = Rect::centered(1.5);
    let (mu, k, data, target, data_side, base_n) = match id {
        CatalogId::DiffusionL4 => (
            [2.0, 2.0],
            None,
            Region::rect(Rect::centered(0.5)),
            Region::rect(Rect::centered(1.25)),
            Side::Neg,
            12,
        ),
        CatalogId::HelmholtzL4Box => (
            [2.0, 2.0],
            Some([3.0, 1.0]),
            Region::rect(Rect::centered(0.8)),
            Region::rect(Rect::new(-1.1, 1.1, -1.0, 1.0)),
            Side::Neg,
            30,
        ),
        CatalogId::HelmholtzL4Convex => {
            let b = Rect::new(-1.5, 1.5, -1.5, 1.25);
            ([1.0, 2.0], Some([16.0, 2.0]), Region::difference(b, Rect::centered(1.25)), Region::rect(b), Side::Pos, 12)
        }
    };
    let mu = overrides.mu.unwrap_or(mu);
    let k = match (k, overrides.k) {
        (None, Some(_)) => return Err(Error::Config(format!("problem '{id}' has no wavenumber"))),
        (k, o) => o.or(k),
    };
    let solution = match k {
        Some(k) => ExactSolution::helmholtz(mu, k),
        None => ExactSolution::diffusion(mu),
    };
    let spec = ProblemSpec {
        id,
        mu,
        rho: solution.rho(),
        levelset,
        domain,
        data,
        target,
        data_side,
        solution,
        stab: overrides.stab.unwrap_or_default(),
        noise: overrides.noise.unwrap_or_default(),
        p: overrides.p.unwrap_or(1),
        q: overrides.q.unwrap_or(1),
        base_n: overrides.base_n.unwrap_or(base_n),
    };
    spec.validate()?;
    Ok(spec)
}

/// Minimum levelset distance of the data domain from the interface.
pub const DATA_MARGIN: f64 = 0.04;

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.p) {
            return Err(Error::Config(format!("polynomial degree p = {} not in 1..=3", self.p)));
        }
        if self.q < 1 || self.q > self.p {
            return Err(Error::Config(format!("geometry order q = {} must satisfy 1 <= q <= p = {}", self.q, self.p)));
        }
        if !(self.mu[0] > 0.0 && self.mu[1] > 0.0 && self.mu.iter().all(|m| m.is_finite())) {
            return Err(Error::Config(format!("diffusion coefficients must be positive, got {:?}", self.mu)));
        }
        if self.base_n == 0 {
            return Err(Error::Config("base_n must be positive".into()));
        }
        self.stab.validate()?;
        if !(self.noise.delta_tilde >= 0.0) {
            return Err(Error::Config(format!("noise level must be nonnegative, got {}", self.noise.delta_tilde)));
        }
        let sign = if self.data_side == Side::Neg { -1.0 } else { 1.0 };
        for p in self.data.boundary_samples(50) {
            let v = sign * self.levelset.value(&p);
            if !(v >= DATA_MARGIN) {
                return Err(Error::Config(format!(
                    "data domain point ({}, {}) is within {DATA_MARGIN} of the interface or on the wrong side",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }

    /// Boxes the mesh must resolve exactly.
    pub fn align_boxes(&self) -> Vec<Rect> {
        self.data.boxes()
    }

    pub fn mu_bar(&self) -> f64 {
        0.5 * (self.mu[0] + self.mu[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd_laplacian(f: &dyn Fn(&Vec2) -> f64, p: &Vec2, h: f64) -> f64 {
        let ex = Vec2::new(h, 0.0);
        let ey = Vec2::new(0.0, h);
        (f(&(p + ex)) + f(&(p - ex)) + f(&(p + ey)) + f(&(p - ey)) - 4.0 * f(p)) / (h * h)
    }

    fn fd_gradient(f: impl Fn(&Vec2) -> f64, p: &Vec2, h: f64) -> Vec2 {
        let ex = Vec2::new(h, 0.0);
        let ey = Vec2::new(0.0, h);
        Vec2::new((f(&(p + ex)) - f(&(p - ex))) / (2.0 * h), (f(&(p + ey)) - f(&(p - ey))) / (2.0 * h))
    }

    fn solutions() -> Vec<ExactSolution> {
        vec![
            ExactSolution::diffusion([2.0, 2.0]),
            ExactSolution::diffusion([2.0, 20.0]),
            ExactSolution::diffusion([20.0, 2.0]),
            ExactSolution::helmholtz([1.0, 2.0], [16.0, 2.0]),
            ExactSolution::helmholtz([2.0, 2.0], [3.0, 6.0]),
            ExactSolution::helmholtz([2.0, 2.0], [3.0, 1.0]),
            ExactSolution::helmholtz([2.0, 20.0], [3.0, 6.0]),
            ExactSolution::Quadratic { mu: 3.0, c: [1.0, -0.5, 0.25, 0.7, -1.1, 0.4] },
        ]
    }

    /// Points on `‖x‖₄ = 1` with finite-difference normals.
    fn interface_points(n: usize) -> Vec<Vec2> {
        (0..n)
            .map(|i| {
                let t = 2.0 * PI * (i as f64 + 0.5) / n as f64;
                let d = Vec2::new(t.cos(), t.sin());
                d / crate::cutgeom::lp_norm(&d, 4)
            })
            .collect()
    }

    #[test]
    fn diffusion_value_on_axis() {
        for mu in [[2.0, 2.0], [2.0, 20.0], [20.0, 2.0]] {
            let s = ExactSolution::diffusion(mu);
            let p = Vec2::new(1.0, 0.0);
            let expect = PI * mu[0] / (SQRT_2 * mu[1]);
            assert!((s.value(Side::Neg, &p) - expect).abs() < 1e-14);
            assert!((s.value(Side::Pos, &p) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn helmholtz_constants() {
        let ExactSolution::Helmholtz { c1, c2, .. } = ExactSolution::helmholtz([1.0, 2.0], [16.0, 2.0]) else { unreachable!() };
        let expect = -(2.0 * 2.0) / 16.0 * 2f64.cos() / 16f64.sin();
        assert_eq!(c1, expect);
        assert!((c1 + 0.3613).abs() < 1e-4);
        assert!((c2 - (2f64.sin() - c1 * 16f64.cos())).abs() < 1e-15);
    }

    #[test]
    fn interface_compatibility() {
        let ls = LevelSet::Norm { ell: 4 };
        for sol in solutions() {
            let mu = sol.mu();
            for p in interface_points(200) {
                assert!((sol.value(Side::Neg, &p) - sol.value(Side::Pos, &p)).abs() <= 1e-10);
                let g = fd_gradient(|x| ls.value(x), &p, 1e-6);
                let n = g.normalize();
                let flux1 = mu[0] * sol.gradient(Side::Neg, &p).dot(&n);
                let flux2 = mu[1] * sol.gradient(Side::Pos, &p).dot(&n);
                assert!((flux1 - flux2).abs() <= 1e-6, "{sol:?} at {p}: {flux1} vs {flux2}");
            }
        }
    }

    #[test]
    fn equal_coefficients_have_no_kink() {
        let sol = ExactSolution::diffusion([2.0, 2.0]);
        for p in interface_points(50) {
            assert!((sol.gradient(Side::Neg, &p) - sol.gradient(Side::Pos, &p)).norm() < 1e-12);
        }
    }

    #[test]
    fn sources_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        // Richardson-extrapolated five-point Laplacian, fourth order in h.
        let lap4 = |f: &dyn Fn(&Vec2) -> f64, p: &Vec2| {
            let h = 2e-3;
            (4.0 * fd_laplacian(f, p, h / 2.0) - fd_laplacian(f, p, h)) / 3.0
        };
        for sol in solutions() {
            let (mu, rho) = (sol.mu(), sol.rho());
            let mut checked = 0;
            while checked < 100 {
                let p = Vec2::new(rng.random_range(-1.4..1.4), rng.random_range(-1.4..1.4));
                let r = crate::cutgeom::lp_norm(&p, 4);
                if r < 0.1 {
                    continue;
                }
                checked += 1;
                // Each branch is checked where it is used: its side plus a
                // band of active elements beyond the interface.
                let sides: &[Side] = if r < 0.8 { &[Side::Neg] } else if r > 1.2 { &[Side::Pos] } else { &Side::BOTH };
                for &side in sides {
                    let i = side.index();
                    let u = |x: &Vec2| sol.value(side, x);
                    let fd = -mu[i] * lap4(&u, &p) - rho[i] * sol.value(side, &p);
                    let f = sol.source(side, &p).unwrap();
                    let scale = 1.0 + mu[i] * sol.laplacian(side, &p).unwrap().abs() + rho[i] * sol.value(side, &p).abs();
                    assert!((f - fd).abs() <= 1e-5 * scale, "{sol:?} {side:?} {p}: {f} vs {fd}");
                    let g = fd_gradient(u, &p, 1e-6);
                    assert!((g - sol.gradient(side, &p)).norm() <= 1e-6 * (1.0 + g.norm()));
                }
            }
        }
    }

    #[test]
    fn singular_point_is_a_domain_error() {
        let sol = ExactSolution::diffusion([2.0, 2.0]);
        assert!(matches!(sol.source(Side::Pos, &Vec2::zeros()), Err(Error::Domain(_))));
        assert!(sol.source(Side::Neg, &Vec2::zeros()).is_ok());
    }

    #[test]
    fn affine_function_has_no_source() {
        // With rho = 0 the diffusion source of an affine field vanishes; the
        // catalog formulas are not affine, so check the operator directly.
        let lap = fd_laplacian(&|p: &Vec2| 3.0 * p.x - 2.0 * p.y + 1.0, &Vec2::new(0.3, 0.4), 1e-3);
        assert!(lap.abs() < 1e-9);
    }

    #[test]
    fn catalog_defaults() {
        let d = make_problem(CatalogId::DiffusionL4, &Overrides::default()).unwrap();
        assert_eq!(d.mu, [2.0, 2.0]);
        assert_eq!(d.rho, [0.0, 0.0]);
        assert_eq!(d.levelset, LevelSet::Norm { ell: 4 });
        assert_eq!(d.data, Region::rect(Rect::centered(0.5)));
        assert_eq!(d.target, Region::rect(Rect::centered(1.25)));

        let c = make_problem(CatalogId::HelmholtzL4Convex, &Overrides { k: Some([16.0, 2.0]), mu: Some([1.0, 2.0]), ..Default::default() }).unwrap();
        assert_eq!(c.rho, [256.0, 4.0]);
        assert_eq!(c.data_side, Side::Pos);

        let bad = make_problem(CatalogId::DiffusionL4, &Overrides { p: Some(2), q: Some(3), ..Default::default() });
        assert!(matches!(bad, Err(Error::Config(_))));
        assert!(make_problem(CatalogId::DiffusionL4, &Overrides { k: Some([1.0, 1.0]), ..Default::default() }).is_err());
        assert!("nope".parse::<CatalogId>().is_err());
        assert_eq!("helmholtz-l4-box".parse::<CatalogId>().unwrap(), CatalogId::HelmholtzL4Box);
    }

    #[test]
    fn data_domains_keep_their_margin() {
        let ls = LevelSet::Norm { ell: 4 };
        assert!((crate::cutgeom::lp_norm(&Vec2::new(0.8, 0.8), 4) - 0.9514).abs() < 1e-4);
        for id in CatalogId::ALL {
            let spec = make_problem(id, &Overrides::default()).unwrap();
            let sign = if spec.data_side == Side::Neg { -1.0 } else { 1.0 };
            for p in spec.data.boundary_samples(100) {
                assert!(sign * ls.value(&p) >= DATA_MARGIN);
            }
        }
    }

    #[test]
    fn region_membership() {
        let r = Region::difference(Rect::new(-1.5, 1.5, -1.5, 1.25), Rect::centered(1.25));
        assert!(r.contains(&Vec2::new(1.4, 0.0)));
        assert!(r.contains(&Vec2::new(1.25, 0.0)));
        assert!(!r.contains(&Vec2::new(0.0, 0.0)));
        assert!(!r.contains(&Vec2::new(0.0, 1.4)));
        assert!((r.area() - (3.0 * 2.75 - 2.5 * 2.5)).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn branches_are_finite(x in -1.5..1.5f64, y in -1.5..1.5f64) {
            let p = Vec2::new(x, y);
            prop_assume!(p.norm() > 1e-3);
            for sol in solutions() {
                for side in Side::BOTH {
                    prop_assert!(sol.value(side, &p).is_finite());
                    prop_assert!(sol.source(side, &p).unwrap().is_finite());
                }
            }
        }
    }
}
