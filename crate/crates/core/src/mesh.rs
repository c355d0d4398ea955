//! Structured simplicial meshes of axis-aligned rectangles.
//!
//! Meshes are immutable once built. Grid cells are split along the diagonal
//! from the lower-left to the upper-right corner, so a mesh built with `n`
//! cells per axis and a mesh refined from a coarser one are identical up to
//! element numbering.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::{Mat2, Vec2};

/// Closed axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    /// Square `[-r, r]^2`.
    pub fn centered(r: f64) -> Self {
        Self::new(-r, r, -r, r)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            Vec2::new(self.x0, self.y0),
            Vec2::new(self.x1, self.y0),
            Vec2::new(self.x1, self.y1),
            Vec2::new(self.x0, self.y1),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteriorFacet {
    pub vertices: [usize; 2],
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryFacet {
    pub vertices: [usize; 2],
    pub element: usize,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Vec2>,
    elements: Vec<[usize; 3]>,
    interior_facets: Vec<InteriorFacet>,
    boundary_facets: Vec<BoundaryFacet>,
    domain: Rect,
    h: f64,
}

impl Mesh {
    /// Builds a mesh from raw vertex and element arrays, deriving the facet
    /// adjacency. Elements must be counter-clockwise.
    pub fn from_parts(vertices: Vec<Vec2>, elements: Vec<[usize; 3]>, domain: Rect) -> Result<Self> {
        for (e, tri) in elements.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Structure(format!("element {e} references a missing vertex")));
            }
            let area = signed_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if area <= 0.0 {
                return Err(Error::Structure(format!("element {e} has non-positive area {area:e}")));
            }
        }

        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<([usize; 2], Vec<usize>)> = Vec::new();
        for (e, tri) in elements.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let idx = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(([key.0, key.1], Vec::new()));
                    edges.len() - 1
                });
                edges[idx].1.push(e);
            }
        }

        let mut interior_facets = Vec::new();
        let mut boundary_facets = Vec::new();
        let mut h: f64 = 0.0;
        for (verts, elems) in edges {
            h = h.max((vertices[verts[1]] - vertices[verts[0]]).norm());
            match elems.as_slice() {
                [e] => boundary_facets.push(BoundaryFacet { vertices: verts, element: *e }),
                [l, r] if l != r => interior_facets.push(InteriorFacet { vertices: verts, left: *l, right: *r }),
                _ => {
                    return Err(Error::Structure(format!(
                        "edge ({}, {}) is shared by {} elements",
                        verts[0],
                        verts[1],
                        elems.len()
                    )))
                }
            }
        }

        Ok(Self { vertices, elements, interior_facets, boundary_facets, domain, h })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn interior_facets(&self) -> &[InteriorFacet] {
        &self.interior_facets
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet] {
        &self.boundary_facets
    }

    pub fn num_edges(&self) -> usize {
        self.interior_facets.len() + self.boundary_facets.len()
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    /// Mesh size: the maximum edge length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn min_edge_length(&self) -> f64 {
        self.interior_facets
            .iter()
            .map(|f| f.vertices)
            .chain(self.boundary_facets.iter().map(|f| f.vertices))
            .map(|[a, b]| (self.vertices[b] - self.vertices[a]).norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn element_vertices(&self, e: usize) -> [Vec2; 3] {
        let t = self.elements[e];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn element_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.element_vertices(e);
        signed_area(&a, &b, &c)
    }

    pub fn element_centroid(&self, e: usize) -> Vec2 {
        let [a, b, c] = self.element_vertices(e);
        (a + b + c) / 3.0
    }

    /// Affine map from the reference triangle onto element `e`.
    pub fn affine_map(&self, e: usize) -> AffineMap {
        let [a, b, c] = self.element_vertices(e);
        AffineMap::new(a, b, c)
    }

    /// Unit normal of an interior facet pointing out of its `left` element.
    pub fn facet_normal(&self, facet: &InteriorFacet) -> Vec2 {
        let [a, b] = facet.vertices;
        let t = self.vertices[b] - self.vertices[a];
        let mut n = Vec2::new(t.y, -t.x).normalize();
        let midpoint = (self.vertices[a] + self.vertices[b]) * 0.5;
        if n.dot(&(midpoint - self.element_centroid(facet.left))) < 0.0 {
            n = -n;
        }
        n
    }

    /// Splits every triangle into four congruent children through its edge
    /// midpoints.
    pub fn uniform_refine(&self) -> Mesh {
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec2>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                vertices.push((vertices[a] + vertices[b]) * 0.5);
                vertices.len() - 1
            })
        };
        let mut elements = Vec::with_capacity(4 * self.elements.len());
        for &[a, b, c] in &self.elements {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            elements.push([a, ab, ca]);
            elements.push([ab, b, bc]);
            elements.push([ca, bc, c]);
            elements.push([ab, bc, ca]);
        }
        Mesh::from_parts(vertices, elements, self.domain).expect("refinement preserves mesh validity")
    }

    /// Legacy ASCII VTK export with optional per-vertex scalar fields.
    pub fn write_vtk<W: Write>(&self, mut w: W, point_data: &[(&str, &[f64])]) -> Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "cutfem-uc mesh")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(w, "{} {} 0", v.x, v.y)?;
        }
        writeln!(w, "CELLS {} {}", self.elements.len(), 4 * self.elements.len())?;
        for t in &self.elements {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "CELL_TYPES {}", self.elements.len())?;
        for _ in &self.elements {
            writeln!(w, "5")?;
        }
        if !point_data.is_empty() {
            writeln!(w, "POINT_DATA {}", self.vertices.len())?;
            for (name, values) in point_data {
                if values.len() != self.vertices.len() {
                    return Err(Error::Dimension(format!(
                        "point field '{name}' has {} values for {} vertices",
                        values.len(),
                        self.vertices.len()
                    )));
                }
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for v in values.iter() {
                    writeln!(w, "{v}")?;
                }
            }
        }
        Ok(())
    }
}

/// `x = origin + jac * xi` from the reference triangle `(0,0), (1,0), (0,1)`.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub origin: Vec2,
    pub jac: Mat2,
    pub inv: Mat2,
    pub det: f64,
}

impl AffineMap {
    pub fn new(a: Vec2, b: Vec2, c: Vec2) -> Self {
        let jac = Mat2::from_columns(&[b - a, c - a]);
        let det = jac.determinant();
        let inv = jac.try_inverse().unwrap_or(Mat2::zeros());
        Self { origin: a, jac, inv, det }
    }

    pub fn to_physical(&self, xi: &[f64; 2]) -> Vec2 {
        self.origin + self.jac * Vec2::new(xi[0], xi[1])
    }

    pub fn to_reference(&self, x: &Vec2) -> [f64; 2] {
        let r = self.inv * (x - self.origin);
        [r.x, r.y]
    }
}

pub(crate) fn signed_area(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

/// Builds the `n x n` structured triangulation of `domain`. Every boundary of
/// each box in `align` must fall on a grid line.
pub fn build_structured_mesh(domain: Rect, n: usize, align: &[Rect]) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::Config("number of subdivisions must be at least 1".into()));
    }
    if !(domain.x1 > domain.x0 && domain.y1 > domain.y0) {
        return Err(Error::Config(format!("empty domain {domain:?}")));
    }
    let wx = (domain.x1 - domain.x0) / n as f64;
    let wy = (domain.y1 - domain.y0) / n as f64;
    for b in align {
        let checks = [("x0", b.x0, domain.x0, wx), ("x1", b.x1, domain.x0, wx), ("y0", b.y0, domain.y0, wy), ("y1", b.y1, domain.y0, wy)];
        for (name, value, origin, width) in checks {
            let k = (value - origin) / width;
            if (k - k.round()).abs() > 1e-9 || k.round() < 0.0 || k.round() > n as f64 {
                return Err(Error::Config(format!(
                    "alignment box coordinate {name} = {value} is not on a grid line of width {width}"
                )));
            }
        }
    }

    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Vec2::new(domain.x0 + i as f64 * wx, domain.y0 + j as f64 * wy));
        }
    }
    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v11, v01) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            elements.push([v00, v10, v11]);
            elements.push([v00, v11, v01]);
        }
    }
    Mesh::from_parts(vertices, elements, domain)
}

/// Uniform bucket grid for locating the element containing a point.
pub struct PointLocator<'a> {
    mesh: &'a Mesh,
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        let d = mesh.domain();
        let cell = mesh.h();
        let nx = (((d.x1 - d.x0) / cell).ceil() as usize).max(1);
        let ny = (((d.y1 - d.y0) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let origin = Vec2::new(d.x0, d.y0);
        for e in 0..mesh.num_elements() {
            let vs = mesh.element_vertices(e);
            let (mut lo, mut hi) = (vs[0], vs[0]);
            for v in &vs[1..] {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
            let clamp = |t: f64, m: usize| (t.floor().max(0.0) as usize).min(m - 1);
            let (i0, i1) = (clamp((lo.x - origin.x) / cell, nx), clamp((hi.x - origin.x) / cell, nx));
            let (j0, j1) = (clamp((lo.y - origin.y) / cell, ny), clamp((hi.y - origin.y) / cell, ny));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(e);
                }
            }
        }
        Self { mesh, origin, cell, nx, ny, buckets }
    }

    /// Returns the element containing `p` and its barycentric coordinates.
    pub fn locate(&self, p: &Vec2) -> Option<(usize, [f64; 3])> {
        let fi = (p.x - self.origin.x) / self.cell;
        let fj = (p.y - self.origin.y) / self.cell;
        if fi < -1e-9 || fj < -1e-9 {
            return None;
        }
        let i = (fi.max(0.0) as usize).min(self.nx - 1);
        let j = (fj.max(0.0) as usize).min(self.ny - 1);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &e in &self.buckets[j * self.nx + i] {
            let b = barycentric(&self.mesh.element_vertices(e), p);
            let worst = b[0].min(b[1]).min(b[2]);
            if worst >= 0.0 {
                return Some((e, b));
            }
            if best.as_ref().is_none_or(|(_, _, w)| worst > *w) {
                best = Some((e, b, worst));
            }
        }
        best.filter(|(_, _, w)| *w > -1e-12).map(|(e, b, _)| (e, b))
    }
}

pub(crate) fn barycentric(v: &[Vec2; 3], p: &Vec2) -> [f64; 3] {
    let area = signed_area(&v[0], &v[1], &v[2]);
    let l1 = signed_area(&v[0], p, &v[2]) / area;
    let l2 = signed_area(&v[0], &v[1], p) / area;
    [1.0 - l1 - l2, l1, l2]
}
