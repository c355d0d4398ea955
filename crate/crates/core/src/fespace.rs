//! Lagrange elements, global dof numbering, the doubled cut space, and the
//! homogeneous Dirichlet space.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::cutgeom::{CutGeometry, Side};
use crate::error::{Error, Result};
use crate::isomap::Deformation;
use crate::mesh::Mesh;
use crate::Vec2;

/// Marker for an inactive or constrained local dof.
pub const NO_DOF: usize = usize::MAX;

/// Lagrange shape functions of degree `k` on the reference triangle
/// `(0,0), (1,0), (0,1)`, with nodes on the lattice `(i/k, j/k)`.
#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    degree: usize,
    bary: Vec<[usize; 3]>,
    nodes: Vec<[f64; 2]>,
    monomials: Vec<(usize, usize)>,
    // coef[(m, i)]: coefficient of monomial m in shape function i
    coef: DMatrix<f64>,
}

/// Shape data at one reference point. Hessians are stored as `[xx, xy, yy]`.
#[derive(Debug, Clone, Default)]
pub struct ShapeData {
    pub val: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
    pub hess: Vec<[f64; 3]>,
}

impl LagrangeBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if !(1..=3).contains(&degree) {
            return Err(Error::Unsupported(format!("Lagrange degree {degree} (supported: 1, 2, 3)")));
        }
        let k = degree;
        let mut bary = vec![[k, 0, 0], [0, k, 0], [0, 0, k]];
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            for t in 1..k {
                let mut l = [0; 3];
                l[a] = k - t;
                l[b] = t;
                bary.push(l);
            }
        }
        for j in 1..k {
            for i in 1..k {
                if i + j < k {
                    bary.push([k - i - j, i, j]);
                }
            }
        }
        let nodes: Vec<[f64; 2]> = bary.iter().map(|l| [l[1] as f64 / k as f64, l[2] as f64 / k as f64]).collect();
        let mut monomials = Vec::new();
        for total in 0..=k {
            for b in 0..=total {
                monomials.push((total - b, b));
            }
        }
        let n = nodes.len();
        let vandermonde = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = monomials[j];
            nodes[i][0].powi(a as i32) * nodes[i][1].powi(b as i32)
        });
        let coef = vandermonde.try_inverse().expect("Lagrange Vandermonde matrix is invertible");
        Ok(Self { degree, bary, nodes, monomials, coef })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    /// Integer barycentric coordinates of each node, scaled by the degree.
    pub fn node_bary(&self) -> &[[usize; 3]] {
        &self.bary
    }

    /// Evaluates shape data up to `order` derivatives into `out`.
    pub fn eval_into(&self, xi: [f64; 2], order: usize, out: &mut ShapeData) {
        let n = self.len();
        let k = self.degree;
        let (x, y) = (xi[0], xi[1]);
        let mut px = [1.0; 4];
        let mut py = [1.0; 4];
        for i in 1..=k {
            px[i] = px[i - 1] * x;
            py[i] = py[i - 1] * y;
        }
        let pw = |p: &[f64; 4], e: isize| if e < 0 { 0.0 } else { p[e as usize] };
        out.val.clear();
        out.val.resize(n, 0.0);
        out.grad.clear();
        out.hess.clear();
        if order >= 1 {
            out.grad.resize(n, [0.0; 2]);
        }
        if order >= 2 {
            out.hess.resize(n, [0.0; 3]);
        }
        for (m, &(a, b)) in self.monomials.iter().enumerate() {
            let (a, b) = (a as isize, b as isize);
            let (af, bf) = (a as f64, b as f64);
            let v = px[a as usize] * py[b as usize];
            let dx = af * pw(&px, a - 1) * py[b as usize];
            let dy = bf * px[a as usize] * pw(&py, b - 1);
            let (dxx, dxy, dyy) = if order >= 2 {
                (
                    af * (af - 1.0) * pw(&px, a - 2) * py[b as usize],
                    af * bf * pw(&px, a - 1) * pw(&py, b - 1),
                    bf * (bf - 1.0) * px[a as usize] * pw(&py, b - 2),
                )
            } else {
                (0.0, 0.0, 0.0)
            };
            for i in 0..n {
                let c = self.coef[(m, i)];
                if c == 0.0 {
                    continue;
                }
                out.val[i] += c * v;
                if order >= 1 {
                    out.grad[i][0] += c * dx;
                    out.grad[i][1] += c * dy;
                }
                if order >= 2 {
                    out.hess[i][0] += c * dxx;
                    out.hess[i][1] += c * dxy;
                    out.hess[i][2] += c * dyy;
                }
            }
        }
    }

    pub fn eval(&self, xi: [f64; 2], order: usize) -> Result<ShapeData> {
        if order > 2 {
            return Err(Error::Unsupported(format!("derivative order {order} (supported: 0, 1, 2)")));
        }
        let mut out = ShapeData::default();
        self.eval_into(xi, order, &mut out);
        Ok(out)
    }
}

type NodeKey = [(usize, usize); 3];

/// Global numbering of the standard continuous Lagrange space on a mesh.
#[derive(Debug, Clone)]
pub struct DofMap {
    basis: LagrangeBasis,
    elem_dofs: Vec<usize>,
    coords: Vec<Vec2>,
    on_boundary: Vec<bool>,
    owner: Vec<(usize, usize)>,
}

impl DofMap {
    pub fn new(mesh: &Mesh, degree: usize) -> Result<Self> {
        let basis = LagrangeBasis::new(degree)?;
        let nloc = basis.len();
        let mut index: HashMap<NodeKey, usize> = HashMap::new();
        let mut elem_dofs = Vec::with_capacity(nloc * mesh.num_elements());
        let mut coords = Vec::new();
        let mut keys = Vec::new();
        let mut owner = Vec::new();
        for (e, tri) in mesh.elements().iter().enumerate() {
            for (i, l) in basis.node_bary().iter().enumerate() {
                let mut key = [(usize::MAX, 0); 3];
                for (slot, (&v, &w)) in tri.iter().zip(l).filter(|(_, &w)| w > 0).enumerate() {
                    key[slot] = (v, w);
                }
                key.sort_unstable();
                let id = *index.entry(key).or_insert_with(|| {
                    let m = mesh.affine_map(e);
                    coords.push(m.to_physical(&basis.nodes()[i]));
                    keys.push(key);
                    owner.push((e, i));
                    coords.len() - 1
                });
                elem_dofs.push(id);
            }
        }
        let mut boundary_vertex = vec![false; mesh.num_vertices()];
        let mut boundary_edge = std::collections::HashSet::new();
        for f in mesh.boundary_facets() {
            boundary_vertex[f.vertices[0]] = true;
            boundary_vertex[f.vertices[1]] = true;
            boundary_edge.insert((f.vertices[0].min(f.vertices[1]), f.vertices[0].max(f.vertices[1])));
        }
        let on_boundary = keys
            .iter()
            .map(|k| {
                let vs: Vec<usize> = k.iter().filter(|(v, _)| *v != usize::MAX).map(|(v, _)| *v).collect();
                match vs.as_slice() {
                    [v] => boundary_vertex[*v],
                    [a, b] => boundary_edge.contains(&((*a).min(*b), (*a).max(*b))),
                    _ => false,
                }
            })
            .collect();
        Ok(Self { basis, elem_dofs, coords, on_boundary, owner })
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn num_dofs(&self) -> usize {
        self.coords.len()
    }

    pub fn element_dofs(&self, e: usize) -> &[usize] {
        let n = self.basis.len();
        &self.elem_dofs[e * n..(e + 1) * n]
    }

    /// Reference-configuration position of each node.
    pub fn coords(&self) -> &[Vec2] {
        &self.coords
    }

    pub fn on_boundary(&self, dof: usize) -> bool {
        self.on_boundary[dof]
    }

    /// One element containing the node and the node's local index there.
    pub fn owner(&self, dof: usize) -> (usize, usize) {
        self.owner[dof]
    }
}

/// The doubled space: one copy of the Lagrange space per side, restricted
/// to that side's active mesh. Side 1 dofs are numbered first.
#[derive(Debug, Clone)]
pub struct CutSpace {
    dofmap: DofMap,
    side_dofs: [Vec<usize>; 2],
    offsets: [usize; 3],
    // background dof of each global cut-space dof
    background: Vec<usize>,
}

impl CutSpace {
    pub fn new(dofmap: DofMap, geometry: &CutGeometry) -> Self {
        let mut side_dofs = [vec![NO_DOF; dofmap.num_dofs()], vec![NO_DOF; dofmap.num_dofs()]];
        let mut background = Vec::new();
        let mut offsets = [0; 3];
        for side in Side::BOTH {
            let map = &mut side_dofs[side.index()];
            for &e in geometry.active(side) {
                for &d in dofmap.element_dofs(e) {
                    if map[d] == NO_DOF {
                        map[d] = background.len();
                        background.push(d);
                    }
                }
            }
            offsets[side.index() + 1] = background.len();
        }
        Self { dofmap, side_dofs, offsets, background }
    }

    pub fn dofmap(&self) -> &DofMap {
        &self.dofmap
    }

    pub fn degree(&self) -> usize {
        self.dofmap.degree()
    }

    pub fn num_dofs(&self) -> usize {
        self.background.len()
    }

    pub fn side_range(&self, side: Side) -> std::ops::Range<usize> {
        self.offsets[side.index()]..self.offsets[side.index() + 1]
    }

    /// Global index of background dof `d` in the side block, if active.
    pub fn side_dof(&self, side: Side, d: usize) -> Option<usize> {
        let g = self.side_dofs[side.index()][d];
        (g != NO_DOF).then_some(g)
    }

    /// Local-to-global map of element `e` on `side`, writing [`NO_DOF`] for
    /// dofs of elements outside the side's active mesh.
    pub fn element_dofs_into(&self, e: usize, side: Side, out: &mut Vec<usize>) {
        out.clear();
        out.extend(self.dofmap.element_dofs(e).iter().map(|&d| self.side_dofs[side.index()][d]));
    }

    pub fn element_dofs(&self, e: usize, side: Side) -> Vec<usize> {
        let mut v = Vec::new();
        self.element_dofs_into(e, side, &mut v);
        v
    }

    pub fn background_dof(&self, g: usize) -> usize {
        self.background[g]
    }

    pub fn side_of(&self, g: usize) -> Side {
        if g < self.offsets[1] {
            Side::Neg
        } else {
            Side::Pos
        }
    }
}

/// Lagrange space with homogeneous Dirichlet conditions on the domain
/// boundary.
#[derive(Debug, Clone)]
pub struct DirichletSpace {
    dofmap: DofMap,
    free: Vec<usize>,
    n: usize,
}

impl DirichletSpace {
    pub fn new(dofmap: DofMap) -> Self {
        let mut n = 0;
        let free = (0..dofmap.num_dofs())
            .map(|d| {
                if dofmap.on_boundary(d) {
                    NO_DOF
                } else {
                    n += 1;
                    n - 1
                }
            })
            .collect();
        Self { dofmap, free, n }
    }

    pub fn dofmap(&self) -> &DofMap {
        &self.dofmap
    }

    pub fn num_dofs(&self) -> usize {
        self.n
    }

    pub fn element_dofs_into(&self, e: usize, out: &mut Vec<usize>) {
        out.clear();
        out.extend(self.dofmap.element_dofs(e).iter().map(|&d| self.free[d]));
    }

    pub fn element_dofs(&self, e: usize) -> Vec<usize> {
        let mut v = Vec::new();
        self.element_dofs_into(e, &mut v);
        v
    }
}

/// Builds the cut space and the Dirichlet space of degree `p`.
pub fn build_spaces(mesh: &Mesh, geometry: &CutGeometry, p: usize) -> Result<(CutSpace, DirichletSpace)> {
    let dofmap = DofMap::new(mesh, p)?;
    Ok((CutSpace::new(dofmap.clone(), geometry), DirichletSpace::new(dofmap)))
}

/// Interpolates per-side functions at the deformed nodal positions.
pub fn nodal_interpolate<F>(f: F, space: &CutSpace, mesh: &Mesh, deformation: &Deformation) -> Result<Vec<f64>>
where
    F: Fn(Side, &Vec2) -> f64,
{
    let dm = space.dofmap();
    let mut out = Vec::with_capacity(space.num_dofs());
    for g in 0..space.num_dofs() {
        let d = space.background_dof(g);
        let (e, i) = dm.owner(d);
        let y = deformation.map_point(mesh, e, dm.basis().nodes()[i]);
        let v = f(space.side_of(g), &y);
        if !v.is_finite() {
            return Err(Error::Data(format!("interpolated function is not finite at ({}, {})", y.x, y.y)));
        }
        out.push(v);
    }
    Ok(out)
}
