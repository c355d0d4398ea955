//! Piecewise linear reference geometry of the interface.
//!
//! The levelset is interpolated at mesh vertices; elements where the
//! interpolant takes both strict signs are cut along a single straight
//! segment and split into sub-triangles tagged by side.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mesh::{signed_area, Mesh};
use crate::quadrature::{SegmentRule, TriangleRule};
use crate::Vec2;

/// Implicit interface descriptions. The interface is the zero set, side 1
/// (`Neg`) is where the levelset is negative.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelSet {
    /// `‖x‖_ℓ − 1`.
    Norm { ell: u32 },
    /// `n·x − c`.
    Affine { normal: Vec2, offset: f64 },
    /// `‖x − center‖² − r²`.
    Quadratic { center: Vec2, radius: f64 },
}

impl LevelSet {
    pub fn value(&self, p: &Vec2) -> f64 {
        match self {
            LevelSet::Norm { ell } => lp_norm(p, *ell) - 1.0,
            LevelSet::Affine { normal, offset } => normal.dot(p) - offset,
            LevelSet::Quadratic { center, radius } => (p - center).norm_squared() - radius * radius,
        }
    }

    pub fn gradient(&self, p: &Vec2) -> Vec2 {
        match self {
            LevelSet::Norm { ell } => {
                let r = lp_norm(p, *ell);
                if r == 0.0 {
                    return Vec2::zeros();
                }
                let e = *ell as i32;
                let g = |t: f64| t.signum() * t.abs().powi(e - 1);
                Vec2::new(g(p.x), g(p.y)) * r.powi(1 - e)
            }
            LevelSet::Affine { normal, .. } => *normal,
            LevelSet::Quadratic { center, .. } => (p - center) * 2.0,
        }
    }
}

pub fn lp_norm(p: &Vec2, ell: u32) -> f64 {
    match ell {
        2 => p.norm(),
        _ => {
            let e = ell as i32;
            (p.x.abs().powi(e) + p.y.abs().powi(e)).powf(1.0 / ell as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Neg = 0,
    Pos = 1,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Neg, Side::Pos];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementClass {
    Neg,
    Pos,
    Cut,
}

/// Straight interface piece inside a cut element with unit normal pointing
/// from the negative to the positive side.
#[derive(Debug, Clone, Copy)]
pub struct InterfaceSegment {
    pub a: Vec2,
    pub b: Vec2,
    pub normal: Vec2,
}

impl InterfaceSegment {
    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

#[derive(Debug, Clone)]
pub struct CutElement {
    pub parts: Vec<([Vec2; 3], Side)>,
    pub segment: InterfaceSegment,
}

#[derive(Debug, Clone)]
pub struct CutGeometry {
    phi_hat: Vec<f64>,
    class: Vec<ElementClass>,
    active: [Vec<usize>; 2],
    cuts: HashMap<usize, CutElement>,
}

/// Vertex values of the levelset.
pub fn interpolate_p1(levelset: &LevelSet, mesh: &Mesh) -> Result<Vec<f64>> {
    mesh.vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let val = levelset.value(v);
            if val.is_finite() {
                Ok(val)
            } else {
                Err(Error::Data(format!("levelset is not finite at vertex {i} ({}, {})", v.x, v.y)))
            }
        })
        .collect()
}

/// Classifies a vertex value triple. Zero values carry no side.
pub fn classify(values: [f64; 3]) -> Option<ElementClass> {
    let neg = values.iter().any(|&v| v < 0.0);
    let pos = values.iter().any(|&v| v > 0.0);
    match (neg, pos) {
        (true, true) => Some(ElementClass::Cut),
        (true, false) => Some(ElementClass::Neg),
        (false, true) => Some(ElementClass::Pos),
        (false, false) => None,
    }
}

/// Zero of the linear interpolant on the edge `a → b`.
fn crossing_parameter(fa: f64, fb: f64) -> f64 {
    fa / (fa - fb)
}

fn ccw(mut t: [Vec2; 3]) -> [Vec2; 3] {
    if signed_area(&t[0], &t[1], &t[2]) < 0.0 {
        t.swap(1, 2);
    }
    t
}

/// Splits a cut triangle given its vertices, vertex values, and the crossing
/// points on the edges `(0,1), (1,2), (2,0)` (only sign-changing edges are
/// read).
pub fn decompose_with_crossings(v: [Vec2; 3], f: [f64; 3], crossing: [Option<Vec2>; 3]) -> CutElement {
    let side_of = |x: f64| if x < 0.0 { Side::Neg } else { Side::Pos };
    let edge = |i: usize, j: usize| -> Vec2 {
        let k = if (i + 1) % 3 == j { i } else { j };
        crossing[k].expect("crossing on sign-changing edge")
    };
    let grad = {
        let m = crate::mesh::AffineMap::new(v[0], v[1], v[2]);
        m.inv.transpose() * Vec2::new(f[1] - f[0], f[2] - f[0])
    };
    let normal = grad.normalize();

    let mut parts = Vec::with_capacity(3);
    let segment;
    if let Some(z) = (0..3).find(|&i| f[i] == 0.0) {
        let (i, j) = ((z + 1) % 3, (z + 2) % 3);
        let c = edge(i, j);
        parts.push((ccw([v[z], v[i], c]), side_of(f[i])));
        parts.push((ccw([v[z], c, v[j]]), side_of(f[j])));
        segment = (v[z], c);
    } else {
        // The lone vertex is the one whose sign differs from both others.
        let lone = (0..3)
            .find(|&i| (f[i] < 0.0) != (f[(i + 1) % 3] < 0.0) && (f[i] < 0.0) != (f[(i + 2) % 3] < 0.0))
            .expect("cut element has a lone vertex");
        let (a, b) = ((lone + 1) % 3, (lone + 2) % 3);
        let (ca, cb) = (edge(lone, a), edge(lone, b));
        let (s_lone, s_rest) = (side_of(f[lone]), side_of(f[a]));
        parts.push((ccw([v[lone], ca, cb]), s_lone));
        parts.push((ccw([ca, v[a], v[b]]), s_rest));
        parts.push((ccw([ca, v[b], cb]), s_rest));
        segment = (ca, cb);
    }
    CutElement { parts, segment: InterfaceSegment { a: segment.0, b: segment.1, normal } }
}

impl CutGeometry {
    pub fn new(mesh: &Mesh, levelset: &LevelSet) -> Result<Self> {
        let phi_hat = interpolate_p1(levelset, mesh)?;
        Self::from_vertex_values(mesh, phi_hat)
    }

    pub fn from_vertex_values(mesh: &Mesh, phi_hat: Vec<f64>) -> Result<Self> {
        if phi_hat.len() != mesh.num_vertices() {
            return Err(Error::Dimension(format!(
                "{} levelset values for {} vertices",
                phi_hat.len(),
                mesh.num_vertices()
            )));
        }
        let mut class = Vec::with_capacity(mesh.num_elements());
        for (e, t) in mesh.elements().iter().enumerate() {
            let c = classify([phi_hat[t[0]], phi_hat[t[1]], phi_hat[t[2]]]).ok_or(Error::DegenerateLevelset { element: e })?;
            class.push(c);
        }
        for f in mesh.interior_facets() {
            let [a, b] = f.vertices;
            if phi_hat[a] == 0.0 && phi_hat[b] == 0.0 && class[f.left] != class[f.right] {
                return Err(Error::InterfaceOnEdge(a, b));
            }
        }

        // Crossings are computed once per edge, from its lower vertex index,
        // so neighbouring cut elements share identical endpoints.
        let mut crossings: HashMap<(usize, usize), Vec2> = HashMap::new();
        let mut cuts = HashMap::new();
        for (e, t) in mesh.elements().iter().enumerate() {
            if class[e] != ElementClass::Cut {
                continue;
            }
            let mut local = [None; 3];
            for k in 0..3 {
                let (i, j) = (t[k], t[(k + 1) % 3]);
                let (fi, fj) = (phi_hat[i], phi_hat[j]);
                if !((fi < 0.0 && fj > 0.0) || (fi > 0.0 && fj < 0.0)) {
                    continue;
                }
                let (lo, hi) = (i.min(j), i.max(j));
                let point = match crossings.get(&(lo, hi)) {
                    Some(p) => *p,
                    None => {
                        let s = crossing_parameter(phi_hat[lo], phi_hat[hi]);
                        if !(s > 0.0 && s < 1.0) {
                            return Err(Error::CrossingOutOfRange { element: e, t: s });
                        }
                        let (vl, vh) = (mesh.vertices()[lo], mesh.vertices()[hi]);
                        let p = vl + (vh - vl) * s;
                        crossings.insert((lo, hi), p);
                        p
                    }
                };
                local[k] = Some(point);
            }
            let f = [phi_hat[t[0]], phi_hat[t[1]], phi_hat[t[2]]];
            cuts.insert(e, decompose_with_crossings(mesh.element_vertices(e), f, local));
        }

        let mut active = [Vec::new(), Vec::new()];
        for (e, c) in class.iter().enumerate() {
            if *c != ElementClass::Pos {
                active[0].push(e);
            }
            if *c != ElementClass::Neg {
                active[1].push(e);
            }
        }
        Ok(Self { phi_hat, class, active, cuts })
    }

    pub fn phi_hat(&self) -> &[f64] {
        &self.phi_hat
    }

    pub fn class(&self, e: usize) -> ElementClass {
        self.class[e]
    }

    pub fn classes(&self) -> &[ElementClass] {
        &self.class
    }

    /// Elements of the active mesh of `side`, ascending.
    pub fn active(&self, side: Side) -> &[usize] {
        &self.active[side.index()]
    }

    pub fn is_active(&self, e: usize, side: Side) -> bool {
        match self.class[e] {
            ElementClass::Cut => true,
            ElementClass::Neg => side == Side::Neg,
            ElementClass::Pos => side == Side::Pos,
        }
    }

    pub fn cut_elements(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.cuts.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn cut(&self, e: usize) -> Option<&CutElement> {
        self.cuts.get(&e)
    }

    /// Triangles of element `e` lying on `side` in the reference
    /// configuration.
    pub fn parts(&self, mesh: &Mesh, e: usize, side: Side) -> Vec<[Vec2; 3]> {
        match self.class[e] {
            ElementClass::Cut => self.cuts[&e].parts.iter().filter(|(_, s)| *s == side).map(|(t, _)| *t).collect(),
            c if (c == ElementClass::Neg) == (side == Side::Neg) => vec![mesh.element_vertices(e)],
            _ => Vec::new(),
        }
    }

    /// Volume quadrature points on the `side` part of element `e`.
    pub fn volume_quadrature(&self, mesh: &Mesh, e: usize, side: Side, rule: &TriangleRule) -> Vec<(Vec2, f64)> {
        self.parts(mesh, e, side)
            .iter()
            .flat_map(|t| rule.mapped(&t[0], &t[1], &t[2]).collect::<Vec<_>>())
            .collect()
    }

    /// Line quadrature on the interface segment of a cut element.
    pub fn interface_quadrature(&self, e: usize, rule: &SegmentRule) -> Vec<(Vec2, f64)> {
        match self.cuts.get(&e) {
            Some(c) => rule.mapped(&c.segment.a, &c.segment.b).collect(),
            None => Vec::new(),
        }
    }

    /// Area of the reference subdomain of `side`.
    pub fn side_measure(&self, mesh: &Mesh, side: Side) -> f64 {
        self.active(side)
            .iter()
            .flat_map(|&e| self.parts(mesh, e, side))
            .map(|t| signed_area(&t[0], &t[1], &t[2]))
            .sum()
    }

    pub fn interface_length(&self) -> f64 {
        self.cuts.values().map(|c| c.segment.length()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, Rect};
    use proptest::prelude::*;

    fn reference_cut() -> CutElement {
        let v = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let c = [Some(Vec2::new(0.5, 0.0)), None, Some(Vec2::new(0.0, 0.5))];
        decompose_with_crossings(v, [-1.0, 1.0, 1.0], c)
    }

    #[test]
    fn levelset_values() {
        assert!((LevelSet::Norm { ell: 2 }.value(&Vec2::new(1.5, 0.0)) - 0.5).abs() < 1e-15);
        let v = LevelSet::Norm { ell: 4 }.value(&Vec2::new(0.5, 0.5));
        assert!((v - (0.125f64.powf(0.25) - 1.0)).abs() < 1e-15);
        assert!((v + 0.40539).abs() < 1e-5);
    }

    #[test]
    fn levelset_gradients_match_central_differences() {
        let sets = [
            LevelSet::Norm { ell: 2 },
            LevelSet::Norm { ell: 4 },
            LevelSet::Affine { normal: Vec2::new(0.3, -1.2), offset: 0.1 },
            LevelSet::Quadratic { center: Vec2::new(0.1, 0.2), radius: 0.7 },
        ];
        let h = 1e-5;
        for ls in &sets {
            for p in [Vec2::new(0.7, -0.3), Vec2::new(-1.1, 0.4), Vec2::new(0.2, 0.9)] {
                let g = ls.gradient(&p);
                let gx = (ls.value(&(p + Vec2::new(h, 0.0))) - ls.value(&(p - Vec2::new(h, 0.0)))) / (2.0 * h);
                let gy = (ls.value(&(p + Vec2::new(0.0, h))) - ls.value(&(p - Vec2::new(0.0, h)))) / (2.0 * h);
                assert!((g - Vec2::new(gx, gy)).norm() < 1e-8, "{ls:?} at {p}");
            }
        }
    }

    #[test]
    fn classification_rules() {
        assert_eq!(classify([-1.0, -2.0, -0.5]), Some(ElementClass::Neg));
        assert_eq!(classify([1.0, 2.0, 0.5]), Some(ElementClass::Pos));
        assert_eq!(classify([-1.0, 2.0, 0.5]), Some(ElementClass::Cut));
        assert_eq!(classify([0.0, 2.0, 0.5]), Some(ElementClass::Pos));
        assert_eq!(classify([0.0, 0.0, 0.0]), None);
    }

    #[test]
    fn all_zero_element_is_an_error() {
        let mesh = build_structured_mesh(Rect::new(0.0, 1.0, 0.0, 1.0), 1, &[]).unwrap();
        let err = CutGeometry::from_vertex_values(&mesh, vec![0.0, 0.0, 1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateLevelset { element: 0 }));
    }

    #[test]
    fn interface_on_mesh_edge_is_an_error() {
        let mesh = build_structured_mesh(Rect::new(0.0, 1.0, 0.0, 1.0), 1, &[]).unwrap();
        // Diagonal from vertex 0 to vertex 3 carries the zero set.
        let err = CutGeometry::from_vertex_values(&mesh, vec![0.0, 1.0, -1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InterfaceOnEdge(0, 3)));
    }

    #[test]
    fn reference_element_decomposition() {
        let c = reference_cut();
        let neg: Vec<_> = c.parts.iter().filter(|(_, s)| *s == Side::Neg).collect();
        assert_eq!(neg.len(), 1);
        let t = neg[0].0;
        assert!((signed_area(&t[0], &t[1], &t[2]) - 0.125).abs() < 1e-15);
        let total: f64 = c.parts.iter().map(|(t, _)| signed_area(&t[0], &t[1], &t[2])).sum();
        assert!((total - 0.5).abs() < 1e-15);
        assert!((c.segment.length() - 0.5 * 2f64.sqrt()).abs() < 1e-15);
        assert!((c.segment.normal - Vec2::new(1.0, 1.0).normalize()).norm() < 1e-15);
        let rule = TriangleRule::new(2);
        let area: f64 = rule.mapped(&t[0], &t[1], &t[2]).map(|(_, w)| w).sum();
        assert!((area - 0.125).abs() < 1e-15);
    }

    #[test]
    fn zero_vertex_case_splits_in_two() {
        let v = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let c = decompose_with_crossings(v, [0.0, -1.0, 1.0], [None, Some(Vec2::new(0.5, 0.5)), None]);
        assert_eq!(c.parts.len(), 2);
        for (t, _) in &c.parts {
            assert!((signed_area(&t[0], &t[1], &t[2]) - 0.25).abs() < 1e-15);
        }
        assert_eq!(c.segment.a, v[0]);
    }

    #[test]
    fn disc_area_converges_quadratically() {
        let ls = LevelSet::Norm { ell: 2 };
        let mut errs = Vec::new();
        let mut mesh = build_structured_mesh(Rect::centered(1.5), 8, &[]).unwrap();
        for _ in 0..4 {
            let g = CutGeometry::new(&mesh, &ls).unwrap();
            let a1 = g.side_measure(&mesh, Side::Neg);
            let a2 = g.side_measure(&mesh, Side::Pos);
            assert!((a1 + a2 - 9.0).abs() < 1e-12 * 9.0);
            errs.push((a1 - std::f64::consts::PI).abs());
            mesh = mesh.uniform_refine();
        }
        let eoc = (errs[2] / errs[3]).log2();
        assert!(eoc > 1.8, "{errs:?}");
    }

    #[test]
    fn geometry_invariants_on_ell4() {
        let mesh = build_structured_mesh(Rect::centered(1.5), 12, &[]).unwrap();
        let g = CutGeometry::new(&mesh, &LevelSet::Norm { ell: 4 }).unwrap();
        for e in 0..mesh.num_elements() {
            assert!(g.is_active(e, Side::Neg) || g.is_active(e, Side::Pos));
        }
        for e in g.cut_elements() {
            let c = g.cut(e).unwrap();
            let t = mesh.elements()[e];
            let f = [g.phi_hat()[t[0]], g.phi_hat()[t[1]], g.phi_hat()[t[2]]];
            let m = mesh.affine_map(e);
            let grad = m.inv.transpose() * Vec2::new(f[1] - f[0], f[2] - f[0]);
            assert!(c.segment.normal.dot(&grad) > 0.0);
            let total: f64 = c.parts.iter().map(|(t, _)| signed_area(&t[0], &t[1], &t[2])).sum();
            assert!((total - mesh.element_area(e)).abs() < 1e-12 * mesh.element_area(e));
            // Endpoints sit on the zero set of the element interpolant.
            for p in [c.segment.a, c.segment.b] {
                let b = crate::mesh::barycentric(&mesh.element_vertices(e), &p);
                let val = b[0] * f[0] + b[1] * f[1] + b[2] * f[2];
                assert!(val.abs() < 1e-13);
            }
        }
    }

    proptest! {
        #[test]
        fn cut_parts_partition_the_element(
            f0 in -1.0..1.0f64, f1 in -1.0..1.0f64, f2 in -1.0..1.0f64,
        ) {
            let f = [f0, f1, f2];
            prop_assume!(f.iter().all(|x| x.abs() > 1e-3));
            prop_assume!(classify(f) == Some(ElementClass::Cut));
            let v = [Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.5), Vec2::new(0.3, 1.1)];
            let mut c = [None; 3];
            for k in 0..3 {
                let (i, j) = (k, (k + 1) % 3);
                if (f[i] < 0.0) != (f[j] < 0.0) {
                    c[k] = Some(v[i] + (v[j] - v[i]) * crossing_parameter(f[i], f[j]));
                }
            }
            let cut = decompose_with_crossings(v, f, c);
            let total: f64 = cut.parts.iter().map(|(t, _)| signed_area(&t[0], &t[1], &t[2])).sum();
            let area = signed_area(&v[0], &v[1], &v[2]);
            prop_assert!((total - area).abs() < 1e-12 * area);
            for (t, side) in &cut.parts {
                let centroid = (t[0] + t[1] + t[2]) / 3.0;
                let b = crate::mesh::barycentric(&v, &centroid);
                let val = b[0] * f[0] + b[1] * f[1] + b[2] * f[2];
                prop_assert_eq!(val < 0.0, *side == Side::Neg);
            }
        }
    }
}
