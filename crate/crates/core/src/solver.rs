//! Sparse direct solution of the saddle-point system.
//!
//! Symmetric systems are factored with a supernodal sparse `LDLᵀ` under an
//! approximate minimum degree ordering (faer). The saddle-point matrix is
//! quasi-definite, so the factorization exists for any symmetric ordering
//! and needs far less memory than LU. Non-symmetric input, or a zero pivot,
//! falls back to sparse LU with partial pivoting. Parallelism is disabled so
//! results are reproducible bit for bit.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltError;
use faer::prelude::Solve;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMat, SparseColMatRef, SymbolicSparseColMat};
use faer::{Conj, Mat, Par, Side};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Relative residual above which iterative refinement is applied.
const REFINE_TOL: f64 = 1e-10;
/// Relative residual above which the solve is flagged.
const WARN_TOL: f64 = 1e-8;
const MAX_REFINEMENT_STEPS: usize = 2;
/// Relative asymmetry up to which the `LDLᵀ` path is used.
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: Vec<f64>,
    /// `‖Kx − b‖₂ / max(‖b‖₂, ε)`.
    pub residual: f64,
    pub refinement_steps: usize,
    pub matrix_nnz: usize,
    /// Set when the residual exceeds the accuracy contract.
    pub warning: Option<String>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_residual(k: &CsrMatrix, x: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let kx = k.matvec(x);
    let r: Vec<f64> = b.iter().zip(&kx).map(|(bi, ki)| bi - ki).collect();
    let rel = norm(&r) / norm(b).max(f64::MIN_POSITIVE);
    (r, rel)
}

enum Factor {
    Ldlt { symbolic: SymbolicCholesky<usize>, values: Vec<f64> },
    Lu(faer::sparse::linalg::solvers::Lu<usize, f64>),
}

impl Factor {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut x = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        match self {
            Factor::Ldlt { symbolic, values } => {
                let ldlt = LdltRef::new(symbolic, values);
                let mut buf = MemBuffer::new(symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
                ldlt.solve_in_place_with_conj(Conj::No, x.as_mut(), Par::Seq, MemStack::new(&mut buf));
            }
            Factor::Lu(lu) => x = lu.solve(&x),
        }
        (0..n).map(|i| x[(i, 0)]).collect()
    }
}

/// Upper triangle of a symmetric CSR matrix, read as CSC: row `j` of K
/// restricted to columns `<= j` is column `j` of the upper triangle.
fn upper_csc(k: &CsrMatrix) -> SparseColMat<usize, f64> {
    let n = k.nrows();
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    col_ptr.push(0);
    for j in 0..n {
        for (i, v) in k.row(j) {
            if i <= j {
                row_idx.push(i);
                values.push(v);
            }
        }
        col_ptr.push(row_idx.len());
    }
    SparseColMat::new(SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx), values)
}

fn factor_ldlt(k: &CsrMatrix) -> std::result::Result<Factor, usize> {
    let upper = upper_csc(k);
    let a: SparseColMatRef<'_, usize, f64> = upper.as_ref();
    let symbolic = factorize_symbolic_cholesky(a.symbolic(), Side::Upper, SymmetricOrdering::Amd, CholeskySymbolicParams::default())
        .map_err(|_| 0usize)?;
    let mut values = vec![0.0; symbolic.len_val()];
    let mut buf = MemBuffer::new(symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()));
    symbolic
        .factorize_numeric_ldlt(&mut values, a, Side::Upper, Default::default(), Par::Seq, MemStack::new(&mut buf), Default::default())
        .map_err(|LdltError::ZeroPivot { index }| index)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(0);
    }
    Ok(Factor::Ldlt { symbolic, values })
}

fn factor_lu(k: &CsrMatrix) -> Result<Factor> {
    let n = k.nrows();
    // Column storage of K is row storage of Kᵀ.
    let kt = k.transpose();
    let symbolic = SymbolicSparseColMat::new_checked(n, n, kt.indptr().to_vec(), None, kt.indices().to_vec());
    let mat = SparseColMat::<usize, f64>::new(symbolic, kt.values().to_vec());
    let lu = mat.sp_lu().map_err(|e| match e {
        LuError::SymbolicSingular { index } => Error::Solver { index, message: "structurally singular matrix".into() },
        LuError::Generic(e) => Error::Solver { index: 0, message: format!("factorization failed: {e:?}") },
    })?;
    Ok(Factor::Lu(lu))
}

/// Solves `K x = b` with a sparse direct factorization.
pub fn solve_sparse(k: &CsrMatrix, b: &[f64]) -> Result<LinearSolution> {
    let n = k.nrows();
    if k.ncols() != n || b.len() != n {
        return Err(Error::Dimension(format!("system {}x{} with right-hand side of length {}", k.nrows(), k.ncols(), b.len())));
    }
    if n == 0 {
        return Ok(LinearSolution { x: Vec::new(), residual: 0.0, refinement_steps: 0, matrix_nnz: 0, warning: None });
    }
    faer::set_global_parallelism(Par::Seq);

    let factor = if k.symmetry_defect() <= SYMMETRY_TOL {
        match factor_ldlt(k) {
            Ok(f) => f,
            Err(_) => factor_lu(k)?,
        }
    } else {
        factor_lu(k)?
    };

    let apply = |rhs: &[f64]| -> Result<Vec<f64>> {
        let x = factor.solve(rhs);
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Solver { index, message: "numerically singular factorization (non-finite solution)".into() });
        }
        Ok(x)
    };

    let mut x = apply(b)?;
    let (mut r, mut residual) = relative_residual(k, &x, b);
    let mut steps = 0;
    while residual > REFINE_TOL && steps < MAX_REFINEMENT_STEPS {
        let dx = apply(&r)?;
        let candidate: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
        let (r_new, res_new) = relative_residual(k, &candidate, b);
        steps += 1;
        if res_new >= residual {
            break;
        }
        x = candidate;
        r = r_new;
        residual = res_new;
    }
    let warning = (residual > WARN_TOL).then(|| format!("relative residual {residual:e} exceeds {WARN_TOL:e}"));
    Ok(LinearSolution { x, residual, refinement_steps: steps, matrix_nnz: k.nnz(), warning })
}
