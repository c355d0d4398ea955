//! Bilinear and linear forms of the stabilised saddle-point method on the
//! deformed cut geometry.
//!
//! Unknowns are ordered as `[u (cut space) | z (dual space)]` and the system
//! matrix is
//!
//! ```text
//! K = [ s_h + M_ω   A_hᵀ ]
//!     [ A_h        −s*   ]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cutgeom::{CutGeometry, ElementClass, Side};
use crate::error::{Error, Result};
use crate::fespace::{build_spaces, nodal_interpolate, CutSpace, DirichletSpace, LagrangeBasis, ShapeData, NO_DOF};
use crate::isomap::{build_deformation, interpolate_q, Deformation, ElementMapping, PushForward, DEFAULT_CLAMP};
use crate::mesh::Mesh;
use crate::problems::ProblemSpec;
use crate::quadrature::{SegmentRule, TriangleRule};
use crate::sparse::{CsrMatrix, PatternBuilder};
use crate::{Mat2, Vec2};

/// Choice of the convex flux weights `κ₁ + κ₂ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KappaMode {
    /// `κ₁ = μ₂ / (μ₁ + μ₂)`.
    #[default]
    Harmonic,
    /// `κ₁ = κ₂ = 1/2`.
    Average,
}

impl KappaMode {
    pub fn weights(self, mu: [f64; 2]) -> [f64; 2] {
        match self {
            KappaMode::Harmonic => {
                let k1 = mu[1] / (mu[0] + mu[1]);
                [k1, 1.0 - k1]
            }
            KappaMode::Average => [0.5, 0.5],
        }
    }
}

/// Stabilisation weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabParams {
    pub gamma_gls: f64,
    pub gamma_cip: f64,
    pub gamma_if: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub include_nc: bool,
    pub kappa_mode: KappaMode,
    /// Quadrature order; `None` selects `2p + 2`.
    pub quad_order: Option<usize>,
}

impl Default for StabParams {
    fn default() -> Self {
        Self {
            gamma_gls: 1.0,
            gamma_cip: 1.0,
            gamma_if: 1.0,
            alpha1: 1e-3,
            alpha2: 1e-2,
            include_nc: true,
            kappa_mode: KappaMode::Harmonic,
            quad_order: None,
        }
    }
}

impl StabParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("gamma_gls", self.gamma_gls),
            ("gamma_cip", self.gamma_cip),
            ("gamma_if", self.gamma_if),
            ("alpha2", self.alpha2),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.alpha1.is_finite() && self.alpha1 > 0.0) {
            return Err(Error::Config(format!("alpha1 must be positive, got {}", self.alpha1)));
        }
        if self.quad_order == Some(0) {
            return Err(Error::Config("quadrature order must be at least 1".into()));
        }
        Ok(())
    }
}

/// Geometry, deformation and spaces of one mesh level.
pub struct Discretization {
    pub problem: ProblemSpec,
    pub mesh: Mesh,
    pub geometry: CutGeometry,
    pub deformation: Deformation,
    pub space: CutSpace,
    pub dual: DirichletSpace,
    pub order: usize,
    /// Elements inside the data domain.
    pub data_elements: Vec<usize>,
    tri_rule: TriangleRule,
    seg_rule: SegmentRule,
}

impl Discretization {
    pub fn new(problem: &ProblemSpec, mesh: Mesh) -> Result<Self> {
        problem.validate()?;
        let geometry = CutGeometry::new(&mesh, &problem.levelset)?;
        let phi_h = interpolate_q(&problem.levelset, &mesh, problem.q)?;
        let deformation = build_deformation(&mesh, &geometry, &phi_h, DEFAULT_CLAMP)?;
        let (space, dual) = build_spaces(&mesh, &geometry, problem.p)?;
        let order = problem.stab.quad_order.unwrap_or(2 * problem.p + 2);
        let mut data_elements = Vec::new();
        for e in 0..mesh.num_elements() {
            if !problem.data.contains(&mesh.element_centroid(e)) {
                continue;
            }
            let expected = if problem.data_side == Side::Neg { ElementClass::Neg } else { ElementClass::Pos };
            if geometry.class(e) == ElementClass::Cut {
                return Err(Error::MeshTooCoarse { element: e, reason: "cut by the interface" });
            }
            if geometry.class(e) != expected {
                return Err(Error::MeshTooCoarse { element: e, reason: "on the wrong side of the interface" });
            }
            if deformation.is_supported(e) {
                return Err(Error::MeshTooCoarse { element: e, reason: "deformed by the isoparametric mapping" });
            }
            data_elements.push(e);
        }
        if data_elements.is_empty() {
            return Err(Error::Config("no mesh element lies inside the data domain".into()));
        }
        Ok(Self {
            problem: problem.clone(),
            mesh,
            geometry,
            deformation,
            space,
            dual,
            order,
            data_elements,
            tri_rule: TriangleRule::new(order),
            seg_rule: SegmentRule::new(order),
        })
    }

    pub fn h(&self) -> f64 {
        self.mesh.h()
    }

    pub fn basis(&self) -> &LagrangeBasis {
        self.space.dofmap().basis()
    }

    pub fn n_primal(&self) -> usize {
        self.space.num_dofs()
    }

    pub fn n_dual(&self) -> usize {
        self.dual.num_dofs()
    }

    pub fn kappa(&self) -> [f64; 2] {
        self.problem.stab.kappa_mode.weights(self.problem.mu)
    }

    /// Reference-configuration quadrature on the `side` part of `e`, or on
    /// the whole element for `None`.
    pub fn volume_points(&self, e: usize, side: Option<Side>) -> Vec<(Vec2, f64)> {
        match side {
            Some(s) => self.geometry.volume_quadrature(&self.mesh, e, s, &self.tri_rule),
            None => {
                let [a, b, c] = self.mesh.element_vertices(e);
                self.tri_rule.mapped(&a, &b, &c).collect()
            }
        }
    }

    pub fn interface_points(&self, e: usize) -> Vec<(Vec2, f64)> {
        self.geometry.interface_quadrature(e, &self.seg_rule)
    }

    pub fn segment_rule(&self) -> &SegmentRule {
        &self.seg_rule
    }

    pub fn mapping(&self, e: usize) -> ElementMapping<'_> {
        self.deformation.element(&self.mesh, e)
    }

    pub fn evaluator(&self) -> PointEval<'_> {
        PointEval::new(self.basis())
    }

    /// Nodal interpolant of the exact solution at deformed nodes.
    pub fn interpolate_exact(&self) -> Result<Vec<f64>> {
        let sol = self.problem.solution;
        nodal_interpolate(|side, y| sol.value(side, y), &self.space, &self.mesh, &self.deformation)
    }
}

/// Physical shape data of the solution space at one point.
pub struct PointEval<'b> {
    basis: &'b LagrangeBasis,
    scratch: ShapeData,
    pub val: Vec<f64>,
    pub grad: Vec<Vec2>,
    pub hess: Vec<Mat2>,
}

impl<'b> PointEval<'b> {
    pub fn new(basis: &'b LagrangeBasis) -> Self {
        let n = basis.len();
        Self { basis, scratch: ShapeData::default(), val: vec![0.0; n], grad: vec![Vec2::zeros(); n], hess: vec![Mat2::zeros(); n] }
    }

    /// Evaluates shape functions at the reference-configuration point `x`.
    pub fn eval(&mut self, map: &mut ElementMapping, x: &Vec2, need_hess: bool) -> Result<PushForward> {
        let xi = map.affine().to_reference(x);
        let pf = map.at(xi, need_hess)?;
        self.basis.eval_into(xi, if need_hess { 2 } else { 1 }, &mut self.scratch);
        let ainv_t = map.affine().inv.transpose();
        let ainv = map.affine().inv;
        for i in 0..self.basis.len() {
            self.val[i] = self.scratch.val[i];
            let gx = ainv_t * Vec2::new(self.scratch.grad[i][0], self.scratch.grad[i][1]);
            self.grad[i] = pf.grad(&gx);
            if need_hess {
                let h = self.scratch.hess[i];
                let hx = ainv_t * Mat2::new(h[0], h[1], h[1], h[2]) * ainv;
                self.hess[i] = pf.hessian(&gx, &hx);
            }
        }
        Ok(pf)
    }

    /// `ℒφ = −μ Δφ − ρ φ` for every shape function; requires Hessians.
    pub fn operator(&self, mu: f64, rho: f64) -> Vec<f64> {
        (0..self.val.len()).map(|i| -mu * self.hess[i].trace() - rho * self.val[i]).collect()
    }

    pub fn value(&self, coeffs: &[f64], dofs: &[usize]) -> f64 {
        dofs.iter().zip(&self.val).filter(|(&d, _)| d != NO_DOF).map(|(&d, v)| coeffs[d] * v).sum()
    }

    pub fn gradient(&self, coeffs: &[f64], dofs: &[usize]) -> Vec2 {
        dofs.iter().zip(&self.grad).filter(|(&d, _)| d != NO_DOF).fold(Vec2::zeros(), |acc, (&d, g)| acc + g * coeffs[d])
    }

    pub fn hessian(&self, coeffs: &[f64], dofs: &[usize]) -> Mat2 {
        dofs.iter().zip(&self.hess).filter(|(&d, _)| d != NO_DOF).fold(Mat2::zeros(), |acc, (&d, h)| acc + h * coeffs[d])
    }
}

fn primal_pattern(disc: &Discretization) -> CsrMatrix {
    let n = disc.n_primal();
    let mut pb = PatternBuilder::new(n, n);
    let mut dofs = Vec::new();
    for side in Side::BOTH {
        for &e in disc.geometry.active(side) {
            disc.space.element_dofs_into(e, side, &mut dofs);
            pb.add_block(&dofs, &dofs);
        }
        for f in disc.mesh.interior_facets() {
            if disc.geometry.is_active(f.left, side) && disc.geometry.is_active(f.right, side) {
                let mut both = disc.space.element_dofs(f.left, side);
                both.extend(disc.space.element_dofs(f.right, side));
                pb.add_block(&both, &both);
            }
        }
    }
    for e in disc.geometry.cut_elements() {
        let mut both = disc.space.element_dofs(e, Side::Neg);
        both.extend(disc.space.element_dofs(e, Side::Pos));
        pb.add_block(&both, &both);
    }
    pb.build()
}

/// The coupling block `A_h` (rows: dual space, columns: cut space).
pub fn assemble_ah(disc: &Discretization) -> Result<CsrMatrix> {
    let (nd, np) = (disc.n_dual(), disc.n_primal());
    let nloc = disc.basis().len();
    let mut pb = PatternBuilder::new(nd, np);
    let (mut rows, mut cols) = (Vec::new(), Vec::new());
    for e in 0..disc.mesh.num_elements() {
        disc.dual.element_dofs_into(e, &mut rows);
        for side in Side::BOTH {
            if disc.geometry.is_active(e, side) {
                disc.space.element_dofs_into(e, side, &mut cols);
                pb.add_block(&rows, &cols);
            }
        }
    }
    let mut a = pb.build();
    let (mu, rho) = (disc.problem.mu, disc.problem.rho);
    let mut ev = disc.evaluator();
    let mut block = vec![0.0; nloc * nloc];
    for e in 0..disc.mesh.num_elements() {
        disc.dual.element_dofs_into(e, &mut rows);
        let mut map = disc.mapping(e);
        for side in Side::BOTH {
            if !disc.geometry.is_active(e, side) {
                continue;
            }
            let i = side.index();
            block.iter_mut().for_each(|b| *b = 0.0);
            for (x, w) in disc.volume_points(e, Some(side)) {
                let pf = ev.eval(&mut map, &x, false)?;
                let wd = w * pf.det;
                for a_ in 0..nloc {
                    for b in 0..nloc {
                        block[a_ * nloc + b] += wd * (mu[i] * ev.grad[a_].dot(&ev.grad[b]) - rho[i] * ev.val[a_] * ev.val[b]);
                    }
                }
            }
            disc.space.element_dofs_into(e, side, &mut cols);
            a.add_block(&rows, &cols, &block);
        }
    }

    if disc.problem.stab.include_nc {
        // N_h^c(u, w) = −(κ₁μ₁ + κ₂μ₂) ∫ ∇w·n (u₁ − u₂)
        let kappa = disc.kappa();
        let flux = kappa[0] * mu[0] + kappa[1] * mu[1];
        let mut block = vec![0.0; nloc * 2 * nloc];
        for e in disc.geometry.cut_elements() {
            let seg = disc.geometry.cut(e).expect("cut element").segment;
            let mut map = disc.mapping(e);
            block.iter_mut().for_each(|b| *b = 0.0);
            for (x, w) in disc.interface_points(e) {
                let pf = ev.eval(&mut map, &x, false)?;
                let (n, factor) = pf.normal(&seg.normal);
                let ws = w * factor;
                for a_ in 0..nloc {
                    let dn = -flux * ev.grad[a_].dot(&n) * ws;
                    for b in 0..nloc {
                        block[a_ * 2 * nloc + b] += dn * ev.val[b];
                        block[a_ * 2 * nloc + nloc + b] -= dn * ev.val[b];
                    }
                }
            }
            disc.dual.element_dofs_into(e, &mut rows);
            let mut cols = disc.space.element_dofs(e, Side::Neg);
            cols.extend(disc.space.element_dofs(e, Side::Pos));
            a.add_block(&rows, &cols, &block);
        }
    }
    Ok(a)
}

/// The four components of the primal stabilisation, kept apart for
/// diagnostics.
#[derive(Debug, Clone)]
pub struct PrimalStab {
    pub gls: CsrMatrix,
    pub cip: CsrMatrix,
    pub iface: CsrMatrix,
    pub tikhonov: CsrMatrix,
}

impl PrimalStab {
    pub fn total(&self) -> CsrMatrix {
        self.gls.linear_combination(1.0, &self.without_gls(), 1.0).expect("same shape")
    }

    /// Everything but the least-squares residual term.
    pub fn without_gls(&self) -> CsrMatrix {
        self.cip
            .linear_combination(1.0, &self.iface, 1.0)
            .and_then(|m| m.linear_combination(1.0, &self.tikhonov, 1.0))
            .expect("same shape")
    }
}

/// Assembles `s_h = GLS + CIP + interface terms + Tikhonov` on the cut space.
pub fn assemble_primal_stab(disc: &Discretization) -> Result<PrimalStab> {
    let pattern = primal_pattern(disc);
    let (mut gls, mut cip, mut iface, mut tikhonov) = (pattern.clone(), pattern.clone(), pattern.clone(), pattern);
    let p = &disc.problem;
    let st = p.stab;
    let h = disc.h();
    let nloc = disc.basis().len();
    let mut ev = disc.evaluator();
    let mut dofs = Vec::new();
    let mut block = vec![0.0; nloc * nloc];
    let tikh_scale = h.powi(2 * p.q as i32);

    for side in Side::BOTH {
        let i = side.index();
        for &e in disc.geometry.active(side) {
            disc.space.element_dofs_into(e, side, &mut dofs);
            let mut map = disc.mapping(e);

            if st.gamma_gls > 0.0 {
                block.iter_mut().for_each(|b| *b = 0.0);
                for (x, w) in disc.volume_points(e, Some(side)) {
                    let pf = ev.eval(&mut map, &x, true)?;
                    let l = ev.operator(p.mu[i], p.rho[i]);
                    let wd = st.gamma_gls * h * h * w * pf.det;
                    for a in 0..nloc {
                        for b in 0..nloc {
                            block[a * nloc + b] += wd * l[a] * l[b];
                        }
                    }
                }
                gls.add_block(&dofs, &dofs, &block);
            }

            block.iter_mut().for_each(|b| *b = 0.0);
            for (x, w) in disc.volume_points(e, None) {
                let pf = ev.eval(&mut map, &x, false)?;
                let wd = tikh_scale * w * pf.det;
                for a in 0..nloc {
                    for b in 0..nloc {
                        block[a * nloc + b] += wd * (st.alpha1 * ev.val[a] * ev.val[b] + st.alpha2 * ev.grad[a].dot(&ev.grad[b]));
                    }
                }
            }
            tikhonov.add_block(&dofs, &dofs, &block);
        }

        if st.gamma_cip > 0.0 {
            let mut ev_r = disc.evaluator();
            let mut jump = vec![0.0; 2 * nloc];
            let mut fblock = vec![0.0; 4 * nloc * nloc];
            for f in disc.mesh.interior_facets() {
                if !(disc.geometry.is_active(f.left, side) && disc.geometry.is_active(f.right, side)) {
                    continue;
                }
                let [va, vb] = f.vertices;
                let (xa, xb) = (disc.mesh.vertices()[va], disc.mesh.vertices()[vb]);
                let t = (xb - xa).normalize();
                let n_ref = disc.mesh.facet_normal(f);
                let (mut ml, mut mr) = (disc.mapping(f.left), disc.mapping(f.right));
                fblock.iter_mut().for_each(|b| *b = 0.0);
                for (x, w) in disc.segment_rule().mapped(&xa, &xb) {
                    let pl = ev.eval(&mut ml, &x, false)?;
                    ev_r.eval(&mut mr, &x, false)?;
                    let (n, _) = pl.normal(&n_ref);
                    let ws = st.gamma_cip * h * p.mu[i] * w * pl.tangent_factor(&t);
                    for a in 0..nloc {
                        jump[a] = ev.grad[a].dot(&n);
                        jump[nloc + a] = -ev_r.grad[a].dot(&n);
                    }
                    for a in 0..2 * nloc {
                        for b in 0..2 * nloc {
                            fblock[a * 2 * nloc + b] += ws * jump[a] * jump[b];
                        }
                    }
                }
                let mut fd = disc.space.element_dofs(f.left, side);
                fd.extend(disc.space.element_dofs(f.right, side));
                cip.add_block(&fd, &fd, &fblock);
            }
        }
    }

    if st.gamma_if > 0.0 {
        let mu_bar = p.mu_bar();
        let mut j0 = vec![0.0; 2 * nloc];
        let mut j1 = vec![0.0; 2 * nloc];
        let mut jt = vec![Vec2::zeros(); 2 * nloc];
        let mut iblock = vec![0.0; 4 * nloc * nloc];
        for e in disc.geometry.cut_elements() {
            let seg = disc.geometry.cut(e).expect("cut element").segment;
            let mut map = disc.mapping(e);
            iblock.iter_mut().for_each(|b| *b = 0.0);
            for (x, w) in disc.interface_points(e) {
                let pf = ev.eval(&mut map, &x, false)?;
                let (n, factor) = pf.normal(&seg.normal);
                let proj = Mat2::identity() - n * n.transpose();
                let ws = st.gamma_if * w * factor;
                for a in 0..nloc {
                    j0[a] = ev.val[a];
                    j0[nloc + a] = -ev.val[a];
                    j1[a] = p.mu[0] * ev.grad[a].dot(&n);
                    j1[nloc + a] = -p.mu[1] * ev.grad[a].dot(&n);
                    jt[a] = proj * ev.grad[a];
                    jt[nloc + a] = -jt[a];
                }
                for a in 0..2 * nloc {
                    for b in 0..2 * nloc {
                        iblock[a * 2 * nloc + b] +=
                            ws * (mu_bar / h * j0[a] * j0[b] + h * j1[a] * j1[b] + h * mu_bar * jt[a].dot(&jt[b]));
                    }
                }
            }
            let mut d = disc.space.element_dofs(e, Side::Neg);
            d.extend(disc.space.element_dofs(e, Side::Pos));
            iface.add_block(&d, &d, &iblock);
        }
    }
    Ok(PrimalStab { gls, cip, iface, tikhonov })
}

/// `s*(z, w) = (μ∇z, ∇w)_Ω` on the Dirichlet space.
pub fn assemble_dual_stab(disc: &Discretization) -> Result<CsrMatrix> {
    let n = disc.n_dual();
    let nloc = disc.basis().len();
    let mut pb = PatternBuilder::new(n, n);
    let mut dofs = Vec::new();
    for e in 0..disc.mesh.num_elements() {
        disc.dual.element_dofs_into(e, &mut dofs);
        pb.add_block(&dofs, &dofs);
    }
    let mut s = pb.build();
    let mut ev = disc.evaluator();
    let mut block = vec![0.0; nloc * nloc];
    for e in 0..disc.mesh.num_elements() {
        block.iter_mut().for_each(|b| *b = 0.0);
        let mut map = disc.mapping(e);
        for side in Side::BOTH {
            for (x, w) in disc.volume_points(e, Some(side)) {
                let pf = ev.eval(&mut map, &x, false)?;
                let wd = disc.problem.mu[side.index()] * w * pf.det;
                for a in 0..nloc {
                    for b in 0..nloc {
                        block[a * nloc + b] += wd * ev.grad[a].dot(&ev.grad[b]);
                    }
                }
            }
        }
        disc.dual.element_dofs_into(e, &mut dofs);
        s.add_block(&dofs, &dofs, &block);
    }
    Ok(s)
}

/// Mass matrix of the data domain on the cut space.
pub fn assemble_data_mass(disc: &Discretization) -> Result<CsrMatrix> {
    let n = disc.n_primal();
    let nloc = disc.basis().len();
    let side = disc.problem.data_side;
    let mut pb = PatternBuilder::new(n, n);
    let mut dofs = Vec::new();
    for &e in &disc.data_elements {
        disc.space.element_dofs_into(e, side, &mut dofs);
        pb.add_block(&dofs, &dofs);
    }
    let mut m = pb.build();
    let mut ev = disc.evaluator();
    let mut block = vec![0.0; nloc * nloc];
    for &e in &disc.data_elements {
        block.iter_mut().for_each(|b| *b = 0.0);
        let mut map = disc.mapping(e);
        for (x, w) in disc.volume_points(e, None) {
            let pf = ev.eval(&mut map, &x, false)?;
            for a in 0..nloc {
                for b in 0..nloc {
                    block[a * nloc + b] += w * pf.det * ev.val[a] * ev.val[b];
                }
            }
        }
        disc.space.element_dofs_into(e, side, &mut dofs);
        m.add_block(&dofs, &dofs, &block);
    }
    Ok(m)
}

/// Perturbations added to the exact data.
#[derive(Debug, Clone, Default)]
pub struct NoisyData {
    /// Perturbation of the measurements as background-space coefficients
    /// (nonzero only on the data domain).
    pub delta_u: Option<Vec<f64>>,
    /// Perturbation of the sources as cut-space coefficients.
    pub delta_f: Option<Vec<f64>>,
    /// `‖δu‖_ω + ‖δf‖`.
    pub delta: f64,
}

impl NoisyData {
    pub fn exact() -> Self {
        Self::default()
    }
}

/// `‖v‖_ω` for background-space coefficients on the data domain.
pub fn data_norm(disc: &Discretization, coeffs: &[f64]) -> Result<f64> {
    let mut ev = disc.evaluator();
    let mut total = 0.0;
    for &e in &disc.data_elements {
        let dofs = disc.space.dofmap().element_dofs(e);
        let mut map = disc.mapping(e);
        for (x, w) in disc.volume_points(e, None) {
            let pf = ev.eval(&mut map, &x, false)?;
            total += w * pf.det * ev.value(coeffs, dofs).powi(2);
        }
    }
    Ok(total.sqrt())
}

/// `(Σ_i ‖v_i‖²_{Ω_{i,h}})^{1/2}` for cut-space coefficients.
pub fn split_l2_norm(disc: &Discretization, coeffs: &[f64]) -> Result<f64> {
    let mut ev = disc.evaluator();
    let mut total = 0.0;
    let mut dofs = Vec::new();
    for side in Side::BOTH {
        for &e in disc.geometry.active(side) {
            disc.space.element_dofs_into(e, side, &mut dofs);
            let mut map = disc.mapping(e);
            for (x, w) in disc.volume_points(e, Some(side)) {
                let pf = ev.eval(&mut map, &x, false)?;
                total += w * pf.det * ev.value(coeffs, &dofs).powi(2);
            }
        }
    }
    Ok(total.sqrt())
}

/// Draws seeded uniform noise and scales each field to `δ̃ h^{p−θ} / 2`.
pub fn apply_noise(disc: &Discretization, delta_tilde: f64, theta: f64, seed: u64) -> Result<NoisyData> {
    if !(delta_tilde >= 0.0) {
        return Err(Error::Config(format!("noise level must be nonnegative, got {delta_tilde}")));
    }
    if delta_tilde == 0.0 {
        return Ok(NoisyData::exact());
    }
    let target = delta_tilde * disc.h().powf(disc.problem.p as f64 - theta) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let nb = disc.space.dofmap().num_dofs();
    let mut on_data = vec![false; nb];
    for &e in &disc.data_elements {
        for &d in disc.space.dofmap().element_dofs(e) {
            on_data[d] = true;
        }
    }
    let mut du: Vec<f64> = on_data.iter().map(|&on| if on { rng.random_range(-1.0..=1.0) } else { 0.0 }).collect();
    let nu = data_norm(disc, &du)?;
    du.iter_mut().for_each(|v| *v *= target / nu);

    let mut df: Vec<f64> = (0..disc.n_primal()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let nf = split_l2_norm(disc, &df)?;
    df.iter_mut().for_each(|v| *v *= target / nf);

    Ok(NoisyData { delta_u: Some(du), delta_f: Some(df), delta: 2.0 * target })
}

/// Right-hand side `[u-block | z-block]`.
pub fn assemble_rhs(disc: &Discretization, noisy: &NoisyData) -> Result<Vec<f64>> {
    let (np, nd) = (disc.n_primal(), disc.n_dual());
    let mut rhs = vec![0.0; np + nd];
    let p = &disc.problem;
    let sol = p.solution;
    let h = disc.h();
    let nloc = disc.basis().len();
    let mut ev = disc.evaluator();
    let (mut dofs, mut zdofs) = (Vec::new(), Vec::new());

    // Measurements on the data domain.
    let side = p.data_side;
    for &e in &disc.data_elements {
        disc.space.element_dofs_into(e, side, &mut dofs);
        let bdofs = disc.space.dofmap().element_dofs(e);
        let mut map = disc.mapping(e);
        for (x, w) in disc.volume_points(e, None) {
            let pf = ev.eval(&mut map, &x, false)?;
            let mut data = sol.value(side, &pf.y);
            if let Some(du) = &noisy.delta_u {
                data += ev.value(du, bdofs);
            }
            for a in 0..nloc {
                rhs[dofs[a]] += w * pf.det * data * ev.val[a];
            }
        }
    }

    for side in Side::BOTH {
        let i = side.index();
        for &e in disc.geometry.active(side) {
            disc.space.element_dofs_into(e, side, &mut dofs);
            disc.dual.element_dofs_into(e, &mut zdofs);
            let mut map = disc.mapping(e);
            for (x, w) in disc.volume_points(e, Some(side)) {
                let pf = ev.eval(&mut map, &x, true)?;
                let mut f = sol.source(side, &pf.y)?;
                if let Some(df) = &noisy.delta_f {
                    f += ev.value(df, &dofs);
                }
                let wd = w * pf.det;
                let l = ev.operator(p.mu[i], p.rho[i]);
                for a in 0..nloc {
                    rhs[dofs[a]] += p.stab.gamma_gls * h * h * wd * f * l[a];
                    if zdofs[a] != NO_DOF {
                        rhs[np + zdofs[a]] += wd * f * ev.val[a];
                    }
                }
            }
        }
    }
    Ok(rhs)
}

/// All assembled blocks of one level.
#[derive(Debug, Clone)]
pub struct SystemBlocks {
    pub a: CsrMatrix,
    pub stab: PrimalStab,
    pub mass_data: CsrMatrix,
    pub dual_stab: CsrMatrix,
}

impl SystemBlocks {
    pub fn assemble(disc: &Discretization) -> Result<Self> {
        Ok(Self {
            a: assemble_ah(disc)?,
            stab: assemble_primal_stab(disc)?,
            mass_data: assemble_data_mass(disc)?,
            dual_stab: assemble_dual_stab(disc)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub n_primal: usize,
    pub n_dual: usize,
}

impl SaddleSystem {
    pub fn split<'v>(&self, x: &'v [f64]) -> (&'v [f64], &'v [f64]) {
        x.split_at(self.n_primal)
    }
}

/// Assembles `K = [[s_h + M_ω, A_hᵀ], [A_h, −s*]]`.
pub fn build_saddle_system(blocks: &SystemBlocks, rhs: Vec<f64>) -> Result<SaddleSystem> {
    let np = blocks.stab.gls.nrows();
    let nd = blocks.dual_stab.nrows();
    if blocks.a.nrows() != nd || blocks.a.ncols() != np || blocks.mass_data.nrows() != np || rhs.len() != np + nd {
        return Err(Error::Dimension(format!(
            "A is {}x{}, s_h is {np}x{np}, s* is {nd}x{nd}, right-hand side has {}",
            blocks.a.nrows(),
            blocks.a.ncols(),
            rhs.len()
        )));
    }
    let upper = blocks.stab.total().linear_combination(1.0, &blocks.mass_data, 1.0)?;
    let mut lower = blocks.dual_stab.clone();
    lower.scale(-1.0);
    let matrix = CsrMatrix::block2(&upper, &blocks.a.transpose(), &blocks.a, &lower)?;
    Ok(SaddleSystem { matrix, rhs, n_primal: np, n_dual: nd })
}

/// Norms entering the stability analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub sh_norm: f64,
    pub data_norm: f64,
    pub dual_norm: f64,
    pub tnorm: f64,
}

/// Stabilisation norms of `(u − u_ref, z)`.
pub fn eval_diagnostics(blocks: &SystemBlocks, u: &[f64], z: &[f64], u_ref: Option<&[f64]>) -> Diagnostics {
    let e: Vec<f64> = match u_ref {
        Some(r) => u.iter().zip(r).map(|(a, b)| a - b).collect(),
        None => u.to_vec(),
    };
    let s = blocks.stab.total();
    let sh = s.bilinear(&e, &e).max(0.0);
    let om = blocks.mass_data.bilinear(&e, &e).max(0.0);
    let du = blocks.dual_stab.bilinear(z, z).max(0.0);
    Diagnostics { sh_norm: sh.sqrt(), data_norm: om.sqrt(), dual_norm: du.sqrt(), tnorm: (sh + om + du).sqrt() }
}

/// Consistency functional of the interpolant: the least-squares term with
/// the exact source subtracted plus the remaining stabilisation energy.
pub fn consistency_functional(disc: &Discretization, blocks: &SystemBlocks, coeffs: &[f64]) -> Result<f64> {
    let p = &disc.problem;
    let h = disc.h();
    let mut ev = disc.evaluator();
    let mut dofs = Vec::new();
    let mut residual = 0.0;
    for side in Side::BOTH {
        let i = side.index();
        for &e in disc.geometry.active(side) {
            disc.space.element_dofs_into(e, side, &mut dofs);
            let mut map = disc.mapping(e);
            for (x, w) in disc.volume_points(e, Some(side)) {
                let pf = ev.eval(&mut map, &x, true)?;
                let lu = -p.mu[i] * ev.hessian(coeffs, &dofs).trace() - p.rho[i] * ev.value(coeffs, &dofs);
                residual += w * pf.det * (p.solution.source(side, &pf.y)? - lu).powi(2);
            }
        }
    }
    Ok(p.stab.gamma_gls * h * h * residual + blocks.stab.without_gls().bilinear(coeffs, coeffs))
}

/// `‖∇z‖_Ω` on the deformed geometry.
pub fn dual_gradient_norm(disc: &Discretization, z: &[f64]) -> Result<f64> {
    let mut ev = disc.evaluator();
    let mut dofs = Vec::new();
    let mut total = 0.0;
    for e in 0..disc.mesh.num_elements() {
        disc.dual.element_dofs_into(e, &mut dofs);
        let mut map = disc.mapping(e);
        for (x, w) in disc.volume_points(e, None) {
            let pf = ev.eval(&mut map, &x, false)?;
            total += w * pf.det * ev.gradient(z, &dofs).norm_squared();
        }
    }
    Ok(total.sqrt())
}
