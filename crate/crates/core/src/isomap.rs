//! Isoparametric deformation of the background mesh.
//!
//! The deformation `Θ_h = id + D` is a continuous degree-`q` vector field.
//! Nodes of cut elements are moved along the normalised gradient of the
//! degree-`q` levelset interpolant until that interpolant reproduces the
//! piecewise linear levelset value, which bends the straight interface
//! segments towards the exact interface.

use std::collections::BTreeMap;
use std::io::Write;

use crate::cutgeom::{CutGeometry, LevelSet};
use crate::error::{Error, Result};
use crate::fespace::{DofMap, ShapeData};
use crate::mesh::{AffineMap, Mesh, PointLocator};
use crate::quadrature::SegmentRule;
use crate::{Mat2, Vec2};

/// Default bound on nodal displacements relative to the mesh size.
pub const DEFAULT_CLAMP: f64 = 0.45;

/// Root tolerance of the nodal search.
const ROOT_TOL: f64 = 1e-12;

/// Degree-`q` nodal interpolant of a scalar function.
#[derive(Debug, Clone)]
pub struct NodalField {
    pub dofmap: DofMap,
    pub values: Vec<f64>,
}

impl NodalField {
    /// Value and reference-space gradient on element `e` at `xi`.
    fn eval_ref(&self, mesh: &Mesh, e: usize, xi: [f64; 2], shape: &mut ShapeData) -> (f64, Vec2) {
        self.dofmap.basis().eval_into(xi, 1, shape);
        let dofs = self.dofmap.element_dofs(e);
        let mut v = 0.0;
        let mut g = Vec2::zeros();
        for (i, &d) in dofs.iter().enumerate() {
            v += self.values[d] * shape.val[i];
            g += Vec2::new(shape.grad[i][0], shape.grad[i][1]) * self.values[d];
        }
        (v, mesh.affine_map(e).inv.transpose() * g)
    }

    /// Value and physical gradient on element `e` at `xi`.
    pub fn eval(&self, mesh: &Mesh, e: usize, xi: [f64; 2]) -> (f64, Vec2) {
        self.eval_ref(mesh, e, xi, &mut ShapeData::default())
    }
}

/// Nodal interpolation of the levelset at the degree-`q` Lagrange nodes.
pub fn interpolate_q(levelset: &LevelSet, mesh: &Mesh, q: usize) -> Result<NodalField> {
    let dofmap = DofMap::new(mesh, q)?;
    let values = dofmap.coords().iter().map(|x| levelset.value(x)).collect();
    Ok(NodalField { dofmap, values })
}

/// The displacement field `D = Θ_h − id`.
#[derive(Debug, Clone)]
pub struct Deformation {
    dofmap: DofMap,
    disp: Vec<Vec2>,
    support: Vec<bool>,
    failures: usize,
}

/// Evaluated mapping at a reference point.
#[derive(Debug, Clone, Copy)]
pub struct PushForward {
    /// Reference-configuration point `x`.
    pub x: Vec2,
    /// Mapped point `Θ_h(x)`.
    pub y: Vec2,
    pub jac: Mat2,
    pub det: f64,
    pub jinv_t: Mat2,
    /// Reference Hessians of the two components of `Θ_h`.
    pub hess: [Mat2; 2],
}

impl PushForward {
    /// Mapped unit normal and line-measure factor for a reference normal.
    pub fn normal(&self, n_ref: &Vec2) -> (Vec2, f64) {
        let m = self.jinv_t * n_ref;
        let len = m.norm();
        (m / len, self.det * len)
    }

    /// Length factor of a reference tangent.
    pub fn tangent_factor(&self, t_ref: &Vec2) -> f64 {
        (self.jac * t_ref).norm()
    }

    pub fn grad(&self, grad_x: &Vec2) -> Vec2 {
        self.jinv_t * grad_x
    }

    /// Physical Hessian of `u ∘ Θ_h^{-1}` from reference derivatives.
    pub fn hessian(&self, grad_x: &Vec2, hess_x: &Mat2) -> Mat2 {
        let g = self.jinv_t * grad_x;
        let corrected = hess_x - self.hess[0] * g.x - self.hess[1] * g.y;
        self.jinv_t * corrected * self.jinv_t.transpose()
    }
}

/// Mapping data of a single element, reused across its quadrature points.
pub struct ElementMapping<'a> {
    element: usize,
    affine: AffineMap,
    basis: &'a crate::fespace::LagrangeBasis,
    disp: Vec<Vec2>,
    zero: bool,
    shape: ShapeData,
}

impl ElementMapping<'_> {
    pub fn affine(&self) -> &AffineMap {
        &self.affine
    }

    pub fn is_identity(&self) -> bool {
        self.zero
    }

    /// Push-forward at reference-triangle coordinates `xi`.
    pub fn at(&mut self, xi: [f64; 2], with_hessian: bool) -> Result<PushForward> {
        let x = self.affine.to_physical(&xi);
        let mut pf = PushForward {
            x,
            y: x,
            jac: Mat2::identity(),
            det: 1.0,
            jinv_t: Mat2::identity(),
            hess: [Mat2::zeros(); 2],
        };
        if self.zero {
            return Ok(pf);
        }
        let order = if with_hessian { 2 } else { 1 };
        self.basis.eval_into(xi, order, &mut self.shape);
        let ainv = self.affine.inv;
        let mut dgrad = Mat2::zeros();
        for (i, d) in self.disp.iter().enumerate() {
            pf.y += d * self.shape.val[i];
            let gx = ainv.transpose() * Vec2::new(self.shape.grad[i][0], self.shape.grad[i][1]);
            dgrad += d * gx.transpose();
            if with_hessian {
                let h = self.shape.hess[i];
                let hx = ainv.transpose() * Mat2::new(h[0], h[1], h[1], h[2]) * ainv;
                pf.hess[0] += hx * d.x;
                pf.hess[1] += hx * d.y;
            }
        }
        pf.jac += dgrad;
        pf.det = pf.jac.determinant();
        if !(pf.det > 0.0) {
            return Err(Error::Geometry { element: self.element, det: pf.det });
        }
        pf.jinv_t = pf.jac.try_inverse().ok_or(Error::Geometry { element: self.element, det: pf.det })?.transpose();
        Ok(pf)
    }

    /// Push-forward at a point given in reference-configuration coordinates.
    pub fn at_point(&mut self, x: &Vec2, with_hessian: bool) -> Result<PushForward> {
        let xi = self.affine.to_reference(x);
        self.at(xi, with_hessian)
    }
}

/// Counters of the nodal root search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DeformationStats {
    pub moved: usize,
    pub failures: usize,
}

impl Deformation {
    /// The identity mapping of degree `q`.
    pub fn identity(mesh: &Mesh, q: usize) -> Result<Self> {
        let dofmap = DofMap::new(mesh, q)?;
        let n = dofmap.num_dofs();
        Ok(Self { dofmap, disp: vec![Vec2::zeros(); n], support: vec![false; mesh.num_elements()], failures: 0 })
    }

    /// Builds a deformation from explicit nodal displacements.
    pub fn from_displacements(mesh: &Mesh, dofmap: DofMap, disp: Vec<Vec2>) -> Result<Self> {
        if disp.len() != dofmap.num_dofs() {
            return Err(Error::Dimension(format!("{} displacements for {} nodes", disp.len(), dofmap.num_dofs())));
        }
        let support = (0..mesh.num_elements())
            .map(|e| dofmap.element_dofs(e).iter().any(|&d| disp[d] != Vec2::zeros()))
            .collect();
        Ok(Self { dofmap, disp, support, failures: 0 })
    }

    pub fn order(&self) -> usize {
        self.dofmap.degree()
    }

    pub fn dofmap(&self) -> &DofMap {
        &self.dofmap
    }

    pub fn displacements(&self) -> &[Vec2] {
        &self.disp
    }

    /// Whether `Θ_h` differs from the identity on element `e`.
    pub fn is_supported(&self, e: usize) -> bool {
        self.support[e]
    }

    /// Number of nodes whose root search found no sign change.
    pub fn failures(&self) -> usize {
        self.failures
    }

    pub fn max_displacement(&self) -> f64 {
        self.disp.iter().map(|d| d.norm()).fold(0.0, f64::max)
    }

    pub fn element<'a>(&'a self, mesh: &Mesh, e: usize) -> ElementMapping<'a> {
        let disp: Vec<Vec2> = self.dofmap.element_dofs(e).iter().map(|&d| self.disp[d]).collect();
        ElementMapping {
            element: e,
            affine: mesh.affine_map(e),
            basis: self.dofmap.basis(),
            disp,
            zero: !self.support[e],
            shape: ShapeData::default(),
        }
    }

    /// `Θ_h` at reference coordinates `xi` of element `e`.
    pub fn map_point(&self, mesh: &Mesh, e: usize, xi: [f64; 2]) -> Vec2 {
        let affine = mesh.affine_map(e);
        let x = affine.to_physical(&xi);
        if !self.support[e] {
            return x;
        }
        let s = self.dofmap.basis().eval(xi, 0).expect("order 0 is supported");
        self.dofmap.element_dofs(e).iter().enumerate().fold(x, |y, (i, &d)| y + self.disp[d] * s.val[i])
    }

    /// Writes one CSV row per node: `node,x,y,dx,dy,norm`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "node,x,y,dx,dy,norm")?;
        for (i, (x, d)) in self.dofmap.coords().iter().zip(&self.disp).enumerate() {
            writeln!(w, "{i},{},{},{},{},{}", x.x, x.y, d.x, d.y, d.norm())?;
        }
        Ok(())
    }
}

/// Evaluates the degree-`q` levelset interpolant anywhere in the mesh.
struct GlobalField<'a> {
    mesh: &'a Mesh,
    field: &'a NodalField,
    locator: PointLocator<'a>,
    shape: ShapeData,
}

impl GlobalField<'_> {
    fn eval(&mut self, p: &Vec2) -> Option<(f64, Vec2)> {
        let (e, b) = self.locator.locate(p)?;
        Some(self.field.eval_ref(self.mesh, e, [b[1], b[2]], &mut self.shape))
    }
}

/// Builds the deformation from the piecewise linear geometry and the
/// degree-`q` levelset interpolant `phi_h`.
pub fn build_deformation(mesh: &Mesh, geometry: &CutGeometry, phi_h: &NodalField, clamp: f64) -> Result<Deformation> {
    let q = phi_h.dofmap.degree();
    if q == 1 {
        return Deformation::identity(mesh, 1);
    }
    let dofmap = &phi_h.dofmap;
    let nloc = dofmap.basis().len();
    let dmax = clamp * mesh.h();
    let mut shape = ShapeData::default();

    // Averaged gradient direction over the cut elements sharing each node.
    let mut directions: BTreeMap<usize, Vec2> = BTreeMap::new();
    let mut phi_hat_at: BTreeMap<usize, f64> = BTreeMap::new();
    for e in geometry.cut_elements() {
        let t = mesh.elements()[e];
        let f = [geometry.phi_hat()[t[0]], geometry.phi_hat()[t[1]], geometry.phi_hat()[t[2]]];
        for i in 0..nloc {
            let d = dofmap.element_dofs(e)[i];
            let xi = dofmap.basis().nodes()[i];
            let (_, g) = phi_h.eval_ref(mesh, e, xi, &mut shape);
            let n = g.norm();
            if n > 0.0 {
                *directions.entry(d).or_insert_with(Vec2::zeros) += g / n;
            } else {
                directions.entry(d).or_insert_with(Vec2::zeros);
            }
            phi_hat_at.insert(d, (1.0 - xi[0] - xi[1]) * f[0] + xi[0] * f[1] + xi[1] * f[2]);
        }
    }

    let mut global = GlobalField { mesh, field: phi_h, locator: PointLocator::new(mesh), shape: ShapeData::default() };
    let mut disp = vec![Vec2::zeros(); dofmap.num_dofs()];
    let mut failures = 0;
    for (&d, dir) in &directions {
        let target = phi_hat_at[&d];
        let x = dofmap.coords()[d];
        let Some((g0, _)) = global.eval(&x) else { continue };
        if (g0 - target).abs() <= ROOT_TOL {
            continue;
        }
        if dir.norm() == 0.0 {
            failures += 1;
            continue;
        }
        let dir = dir.normalize();
        match find_root(|s| global.eval(&(x + dir * s)).map(|(v, g)| (v - target, g.dot(&dir))), dmax) {
            Some(s) => disp[d] = dir * s,
            None => failures += 1,
        }
    }
    let mut def = Deformation::from_displacements(mesh, dofmap.clone(), disp)?;
    def.failures = failures;
    Ok(def)
}

/// Root of `g` on `[-dmax, dmax]` closest to zero: safeguarded Newton from
/// the origin, then a bracketing scan with bisection. `g` returns the value
/// and its derivative, or `None` outside the domain.
fn find_root<G>(mut g: G, dmax: f64) -> Option<f64>
where
    G: FnMut(f64) -> Option<(f64, f64)>,
{
    let (g0, _) = g(0.0)?;
    let mut s = 0.0;
    for _ in 0..50 {
        let (v, dv) = g(s)?;
        if v.abs() <= ROOT_TOL {
            return Some(s);
        }
        if dv == 0.0 || !dv.is_finite() {
            break;
        }
        let next = s - v / dv;
        if !(next.abs() <= dmax) {
            break;
        }
        s = next;
    }

    // Scan outwards from zero in both directions for the nearest sign change.
    let steps = 32;
    let (mut lo_pos, mut lo_neg) = (0.0, 0.0);
    let (mut vpos, mut vneg) = (g0, g0);
    for k in 1..=steps {
        let r = dmax * k as f64 / steps as f64;
        for sign in [1.0, -1.0] {
            let cand = sign * r;
            let prev = if sign > 0.0 { (lo_pos, vpos) } else { (lo_neg, vneg) };
            let Some((vc, _)) = g(cand) else { continue };
            if vc.abs() <= ROOT_TOL {
                return Some(cand);
            }
            if (prev.1 < 0.0) != (vc < 0.0) {
                return bisect(&mut g, prev.0, prev.1, cand);
            }
            if sign > 0.0 {
                (lo_pos, vpos) = (cand, vc);
            } else {
                (lo_neg, vneg) = (cand, vc);
            }
        }
    }
    None
}

fn bisect<G>(g: &mut G, mut a: f64, mut fa: f64, mut b: f64) -> Option<f64>
where
    G: FnMut(f64) -> Option<(f64, f64)>,
{
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let (fm, _) = g(m)?;
        if fm.abs() <= ROOT_TOL || (b - a).abs() <= 4.0 * f64::EPSILON * m.abs().max(f64::MIN_POSITIVE) {
            return Some(m);
        }
        if (fa < 0.0) == (fm < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Maximum of `|φ(Θ_h(x))|` over line quadrature points `x` of the
/// piecewise linear interface.
pub fn geometry_error_probe(mesh: &Mesh, geometry: &CutGeometry, deformation: &Deformation, levelset: &LevelSet, order: usize) -> Result<f64> {
    let rule = SegmentRule::new(order);
    let mut worst: f64 = 0.0;
    for e in geometry.cut_elements() {
        let mut map = deformation.element(mesh, e);
        for (x, _) in geometry.interface_quadrature(e, &rule) {
            let pf = map.at_point(&x, false)?;
            worst = worst.max(levelset.value(&pf.y).abs());
        }
    }
    Ok(worst)
}

/// Area of the deformed negative subdomain.
pub fn deformed_measure(mesh: &Mesh, geometry: &CutGeometry, deformation: &Deformation, side: crate::cutgeom::Side, order: usize) -> Result<f64> {
    let rule = crate::quadrature::TriangleRule::new(order);
    let mut total = 0.0;
    for &e in geometry.active(side) {
        let mut map = deformation.element(mesh, e);
        for (x, w) in geometry.volume_quadrature(mesh, e, side, &rule) {
            total += w * map.at_point(&x, false)?.det;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutgeom::Side;
    use crate::mesh::{build_structured_mesh, Rect};

    fn setup(ls: &LevelSet, n: usize, q: usize) -> (Mesh, CutGeometry, NodalField, Deformation) {
        let mesh = build_structured_mesh(Rect::centered(1.5), n, &[]).unwrap();
        let geom = CutGeometry::new(&mesh, ls).unwrap();
        let phi = interpolate_q(ls, &mesh, q).unwrap();
        let def = build_deformation(&mesh, &geom, &phi, DEFAULT_CLAMP).unwrap();
        (mesh, geom, phi, def)
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let mesh = build_structured_mesh(Rect::centered(1.5), 5, &[]).unwrap();
        let quad = LevelSet::Quadratic { center: Vec2::zeros(), radius: 1.0 };
        let phi = interpolate_q(&quad, &mesh, 2).unwrap();
        for e in [0, 7, 33] {
            for xi in [[0.2, 0.3], [0.5, 0.5], [0.1, 0.0]] {
                let x = mesh.affine_map(e).to_physical(&xi);
                let (v, g) = phi.eval(&mesh, e, xi);
                assert!((v - quad.value(&x)).abs() < 1e-13);
                assert!((g - quad.gradient(&x)).norm() < 1e-12);
            }
        }
        // Edge-midpoint nodes carry the function value at the midpoint.
        let dm = &phi.dofmap;
        let (a, b) = (mesh.vertices()[mesh.elements()[3][0]], mesh.vertices()[mesh.elements()[3][1]]);
        let mid = (a + b) * 0.5;
        let d = dm.element_dofs(3)[3];
        assert!((dm.coords()[d] - mid).norm() < 1e-15);
        assert_eq!(phi.values[d], quad.value(&mid));
    }

    #[test]
    fn affine_levelset_gives_no_displacement() {
        let ls = LevelSet::Affine { normal: Vec2::new(0.6, 0.8), offset: 0.13 };
        for q in 1..=3 {
            let (mesh, geom, _, def) = setup(&ls, 6, q);
            assert_eq!(def.max_displacement(), 0.0);
            assert!(geometry_error_probe(&mesh, &geom, &def, &ls, 6).unwrap() < 1e-14);
        }
    }

    #[test]
    fn identity_push_forward() {
        let mesh = build_structured_mesh(Rect::centered(1.5), 2, &[]).unwrap();
        let def = Deformation::identity(&mesh, 2).unwrap();
        let mut m = def.element(&mesh, 0);
        let pf = m.at([0.2, 0.3], true).unwrap();
        assert_eq!(pf.jac, Mat2::identity());
        assert_eq!(pf.det, 1.0);
        let n = Vec2::new(0.6, 0.8);
        let (nm, f) = pf.normal(&n);
        assert!((nm - n).norm() < 1e-15 && (f - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_scaling_push_forward() {
        // Θ(x) = 2x on the element via D(x) = x at every node.
        let mesh = build_structured_mesh(Rect::new(0.0, 1.0, 0.0, 1.0), 1, &[]).unwrap();
        let dm = DofMap::new(&mesh, 2).unwrap();
        let disp = dm.coords().to_vec();
        let def = Deformation::from_displacements(&mesh, dm, disp).unwrap();
        let mut m = def.element(&mesh, 0);
        let pf = m.at([0.25, 0.25], true).unwrap();
        assert!((pf.det - 4.0).abs() < 1e-12);
        assert!((pf.y - pf.x * 2.0).norm() < 1e-12);
        let n = Vec2::new(1.0, 1.0).normalize();
        let (nm, f) = pf.normal(&n);
        assert!((f - 2.0).abs() < 1e-12);
        assert!((nm - n).norm() < 1e-12);
    }

    #[test]
    fn inverted_element_is_reported() {
        let mesh = build_structured_mesh(Rect::new(0.0, 1.0, 0.0, 1.0), 1, &[]).unwrap();
        let dm = DofMap::new(&mesh, 1).unwrap();
        // y = (−x, y) reflects the element.
        let disp = dm.coords().iter().map(|x| Vec2::new(-2.0 * x.x, 0.0)).collect();
        let def = Deformation::from_displacements(&mesh, dm, disp).unwrap();
        let err = def.element(&mesh, 1).at([0.3, 0.3], false).unwrap_err();
        assert!(matches!(err, Error::Geometry { element: 1, .. }));
    }

    #[test]
    fn measure_factor_identity() {
        // det J ‖J^{-T} n‖ equals the stretch ‖J t‖ of the unit tangent.
        let (mesh, geom, _, def) = setup(&LevelSet::Norm { ell: 4 }, 12, 3);
        for e in geom.cut_elements() {
            let seg = geom.cut(e).unwrap().segment;
            let t = (seg.b - seg.a).normalize();
            let pf = def.element(&mesh, e).at_point(&((seg.a + seg.b) * 0.5), false).unwrap();
            let (_, f) = pf.normal(&seg.normal);
            assert!((f - pf.tangent_factor(&t)).abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_push_forward_matches_finite_differences() {
        let (mesh, geom, _, def) = setup(&LevelSet::Norm { ell: 2 }, 6, 2);
        let e = geom.cut_elements()[0];
        assert!(def.is_supported(e));
        let basis = crate::fespace::LagrangeBasis::new(2).unwrap();
        let coef = [0.3, -1.2, 0.7, 2.0, -0.4, 1.1];
        let affine = mesh.affine_map(e);
        // û on the reference configuration, evaluated through x.
        let uhat = |xi: [f64; 2]| -> (f64, Vec2, Mat2) {
            let s = basis.eval(xi, 2).unwrap();
            let mut v = 0.0;
            let mut g = Vec2::zeros();
            let mut h = Mat2::zeros();
            for i in 0..6 {
                v += coef[i] * s.val[i];
                g += Vec2::new(s.grad[i][0], s.grad[i][1]) * coef[i];
                h += Mat2::new(s.hess[i][0], s.hess[i][1], s.hess[i][1], s.hess[i][2]) * coef[i];
            }
            (v, affine.inv.transpose() * g, affine.inv.transpose() * h * affine.inv)
        };
        let xi0 = [0.3, 0.3];
        let mut map = def.element(&mesh, e);
        let pf = map.at(xi0, true).unwrap();
        let (_, gx, hx) = uhat(xi0);
        let hy = pf.hessian(&gx, &hx);

        // u(y) = û(Θ^{-1}(y)); invert Θ by Newton to evaluate at perturbed y.
        let mut u_at = |y: Vec2| -> f64 {
            let mut x = pf.x + (y - pf.y);
            for _ in 0..30 {
                let p = map.at_point(&x, false).unwrap();
                x -= p.jac.try_inverse().unwrap() * (p.y - y);
            }
            uhat(affine.to_reference(&x)).0
        };
        let h = 1e-4;
        let ex = Vec2::new(h, 0.0);
        let ey = Vec2::new(0.0, h);
        let y = pf.y;
        let uxx = (u_at(y + ex) - 2.0 * u_at(y) + u_at(y - ex)) / (h * h);
        let uyy = (u_at(y + ey) - 2.0 * u_at(y) + u_at(y - ey)) / (h * h);
        let uxy = (u_at(y + ex + ey) - u_at(y + ex - ey) - u_at(y - ex + ey) + u_at(y - ex - ey)) / (4.0 * h * h);
        let fd = Mat2::new(uxx, uxy, uxy, uyy);
        assert!((fd - hy).abs().max() < 1e-6 * (1.0 + hy.abs().max()), "{fd} vs {hy}");
        // The correction term matters on a curved element.
        assert!((hy - pf.jinv_t * hx * pf.jinv_t.transpose()).abs().max() > 1e-6);
    }

    #[test]
    fn construction_equation_holds_at_nodes() {
        for q in 2..=3 {
            let ls = LevelSet::Norm { ell: 4 };
            let (mesh, geom, phi, def) = setup(&ls, 12, q);
            assert_eq!(def.failures(), 0);
            let locator = PointLocator::new(&mesh);
            let dm = def.dofmap();
            for e in geom.cut_elements() {
                let t = mesh.elements()[e];
                let f = [geom.phi_hat()[t[0]], geom.phi_hat()[t[1]], geom.phi_hat()[t[2]]];
                for (i, &d) in dm.element_dofs(e).iter().enumerate() {
                    let xi = dm.basis().nodes()[i];
                    let target = (1.0 - xi[0] - xi[1]) * f[0] + xi[0] * f[1] + xi[1] * f[2];
                    let y = dm.coords()[d] + def.displacements()[d];
                    let (k, b) = locator.locate(&y).unwrap();
                    let (v, _) = phi.eval(&mesh, k, [b[1], b[2]]);
                    assert!((v - target).abs() <= 1e-10);
                    assert!(def.displacements()[d].norm() <= DEFAULT_CLAMP * mesh.h());
                }
                // Vertices never move.
                for i in 0..3 {
                    assert_eq!(def.displacements()[dm.element_dofs(e)[i]], Vec2::zeros());
                }
            }
            // Locality: no displacement away from cut elements.
            let mut on_cut = vec![false; dm.num_dofs()];
            for e in geom.cut_elements() {
                for &d in dm.element_dofs(e) {
                    on_cut[d] = true;
                }
            }
            for d in 0..dm.num_dofs() {
                if !on_cut[d] {
                    assert_eq!(def.displacements()[d], Vec2::zeros());
                }
            }
        }
    }

    fn eoc(e: &[f64]) -> f64 {
        (e[0] / e[e.len() - 1]).log2() / (e.len() - 1) as f64
    }

    #[test]
    fn circle_probe_and_displacement_rates() {
        let ls = LevelSet::Norm { ell: 2 };
        let mut mesh = build_structured_mesh(Rect::centered(1.5), 6, &[]).unwrap();
        let (mut probe, mut disp, mut area) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..4 {
            let geom = CutGeometry::new(&mesh, &ls).unwrap();
            let phi = interpolate_q(&ls, &mesh, 2).unwrap();
            let def = build_deformation(&mesh, &geom, &phi, DEFAULT_CLAMP).unwrap();
            probe.push(geometry_error_probe(&mesh, &geom, &def, &ls, 6).unwrap());
            disp.push(def.max_displacement());
            area.push((deformed_measure(&mesh, &geom, &def, Side::Neg, 6).unwrap() - std::f64::consts::PI).abs());
            mesh = mesh.uniform_refine();
        }
        assert!(eoc(&probe) > 2.7, "{probe:?}");
        assert!((eoc(&disp) - 2.0).abs() < 0.3, "{disp:?}");
        assert!(eoc(&area) > 2.7, "{area:?}");
    }

    #[test]
    fn csv_dump_has_one_row_per_node() {
        let (_, _, _, def) = setup(&LevelSet::Norm { ell: 2 }, 4, 2);
        let mut buf = Vec::new();
        def.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), def.dofmap().num_dofs() + 1);
        assert!(text.starts_with("node,x,y,dx,dy,norm\n"));
    }
}
