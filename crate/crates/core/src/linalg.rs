//! Sparse storage, direct LU solves and gauge projection.
//!
//! Matrices are stored in compressed row form. Assembly goes either through
//! a [`TripletBuilder`], whose finalization is independent of insertion
//! order, or through a fixed sparsity pattern built once per run so that
//! the symbolic LU analysis can be reused across time steps.
//!
//! The factorization is delegated to the sparse LU of `faer`. A row-major
//! matrix is handed to it as the column-major storage of its transpose, and
//! solves use the transposed factors.

use std::sync::Arc;

use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::MatMut;
use faer::prelude::Solve;
use thiserror::Error;

use crate::fem::FESpace;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("factorization of the {block} system failed: {reason}")]
    Singular { block: String, reason: String },
    #[error("linear solve for the {block} system stalled at backward error {backward_error:.3e}")]
    NotConverged { block: String, backward_error: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Dense row-major input, dropping exact zeros.
    pub fn from_dense(nrows: usize, ncols: usize, a: &[f64]) -> Self {
        let mut t = TripletBuilder::new(nrows, ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                t.push(i, j, a[i * ncols + j]);
            }
        }
        t.finalize()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    /// Storage position of entry `(r, c)` if it is in the pattern.
    #[inline]
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[a..b].binary_search(&c).ok().map(|k| a + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |k| self.values[k])
    }

    /// Adds to an entry of the pattern; panics if `(r, c)` is not stored.
    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        match self.position(r, c) {
            Some(k) => self.values[k] += v,
            None => panic!("entry ({r}, {c}) is not in the sparsity pattern"),
        }
    }

    /// Adds a dense local block `local[i * cols.len() + j]`.
    pub fn add_block(&mut self, rows: &[usize], cols: &[usize], local: &[f64]) {
        for (i, &r) in rows.iter().enumerate() {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let idx = &self.col_idx[a..b];
            for (j, &c) in cols.iter().enumerate() {
                let v = local[i * cols.len() + j];
                if v != 0.0 {
                    let k = idx
                        .binary_search(&c)
                        .unwrap_or_else(|_| panic!("entry ({r}, {c}) is not in the sparsity pattern"));
                    self.values[a + k] += v;
                }
            }
        }
    }

    pub fn zero_values(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Replaces row `r` by the unit row `e_r` (the diagonal must be stored).
    pub fn set_row_identity(&mut self, r: usize) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        for k in a..b {
            self.values[k] = if self.col_idx[k] == r { 1.0 } else { 0.0 };
        }
        assert!(self.position(r, r).is_some(), "row {r} has no diagonal entry");
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (r, yr) in y.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut s = 0.0;
            for k in a..b {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yr = s;
        }
    }

    /// Residual `b - A x` together with `|A| |x|` (for backward errors).
    pub fn residual(&self, x: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut r = vec![0.0; self.nrows];
        let mut ax = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut s = 0.0;
            let mut t = 0.0;
            for k in lo..hi {
                let p = self.values[k] * x[self.col_idx[k]];
                s += p;
                t += p.abs();
            }
            r[i] = b[i] - s;
            ax[i] = t;
        }
        (r, ax)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = TripletBuilder::new(self.ncols, self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                t.push(c, r, v);
            }
        }
        t.finalize()
    }
}

/// Coordinate-format accumulator.
///
/// Finalization sorts entries by (row, column, value) before summing
/// duplicates, so the result does not depend on insertion order, bit for bit.
#[derive(Clone, Debug)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        assert!(r < self.nrows && c < self.ncols, "entry ({r}, {c}) outside {}x{}", self.nrows, self.ncols);
        self.entries.push((r, c, v));
    }

    pub fn finalize(mut self) -> CsrMatrix {
        self.entries
            .sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut k = 0;
        while k < self.entries.len() {
            let (r, c, _) = self.entries[k];
            let mut s = 0.0;
            while k < self.entries.len() && self.entries[k].0 == r && self.entries[k].1 == c {
                s += self.entries[k].2;
                k += 1;
            }
            if s != 0.0 {
                col_idx.push(c);
                values.push(s);
                row_ptr[r + 1] += 1;
            }
        }
        for r in 0..self.nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }
}

/// Collects a sparsity pattern; the resulting matrix keeps structural zeros.
#[derive(Clone, Debug)]
pub struct PatternBuilder {
    ncols: usize,
    rows: Vec<Vec<usize>>,
}

impl PatternBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { ncols, rows: vec![Vec::new(); nrows] }
    }

    pub fn add_block(&mut self, rows: &[usize], cols: &[usize]) {
        for &r in rows {
            self.rows[r].extend_from_slice(cols);
        }
    }

    pub fn add(&mut self, r: usize, c: usize) {
        self.rows[r].push(c);
    }

    pub fn build(self) -> CsrMatrix {
        let nrows = self.rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for mut r in self.rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix { nrows, ncols: self.ncols, row_ptr, col_idx, values: vec![0.0; nnz] }
    }
}

/// Sparse LU factors of a square matrix with a reusable symbolic analysis.
pub struct LuFactor {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    symbolic: SymbolicLu<usize>,
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for LuFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuFactor").field("n", &self.n).finish()
    }
}

impl LuFactor {
    pub fn new(a: &CsrMatrix, block: &str) -> Result<Self, LinalgError> {
        if a.nrows != a.ncols {
            return Err(LinalgError::DimensionMismatch { expected: a.nrows, got: a.ncols });
        }
        let sym = SymbolicSparseColMatRef::new_checked(a.nrows, a.ncols, &a.row_ptr, None, &a.col_idx);
        let symbolic = SymbolicLu::try_new(sym).map_err(|e| LinalgError::Singular {
            block: block.to_string(),
            reason: format!("{e:?}"),
        })?;
        let lu = Self::numeric(&symbolic, a, block)?;
        Ok(Self { n: a.nrows, row_ptr: a.row_ptr.clone(), col_idx: a.col_idx.clone(), symbolic, lu })
    }

    fn numeric(symbolic: &SymbolicLu<usize>, a: &CsrMatrix, block: &str) -> Result<Lu<usize, f64>, LinalgError> {
        let sym = SymbolicSparseColMatRef::new_checked(a.nrows, a.ncols, &a.row_ptr, None, &a.col_idx);
        let mat = SparseColMatRef::new(sym, &a.values);
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), mat).map_err(|e| LinalgError::Singular {
            block: block.to_string(),
            reason: format!("{e:?}"),
        })?;
        Ok(lu)
    }

    /// Refactors a matrix with the same pattern, reusing the symbolic analysis.
    pub fn refactor(&mut self, a: &CsrMatrix, block: &str) -> Result<(), LinalgError> {
        if a.row_ptr != self.row_ptr || a.col_idx != self.col_idx {
            *self = Self::new(a, block)?;
            return Ok(());
        }
        self.lu = Self::numeric(&self.symbolic, a, block)?;
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let rhs = MatMut::from_column_major_slice_mut(b, self.n, 1);
        self.lu.solve_transpose_in_place(rhs);
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Componentwise backward error `max_i |r_i| / (|b_i| + (|A||x|)_i)`.
fn backward_error(r: &[f64], b: &[f64], ax: &[f64]) -> f64 {
    let scale = inf_norm(b).max(inf_norm(ax));
    if scale == 0.0 {
        return 0.0;
    }
    inf_norm(r) / scale
}

/// Solves `A x = b` with a fresh factorization and iterative refinement.
///
/// On return `|b - A x| <= 1e-10 |b|` holds for any matrix that is not
/// numerically singular.
pub fn solve_direct(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if b.len() != a.nrows {
        return Err(LinalgError::DimensionMismatch { expected: a.nrows, got: b.len() });
    }
    let f = LuFactor::new(a, "direct")?;
    let mut x = b.to_vec();
    f.solve_in_place(&mut x);
    let nb = inf_norm(b);
    for _ in 0..3 {
        let (mut r, _) = a.residual(&x, b);
        if inf_norm(&r) <= 1e-13 * nb {
            break;
        }
        f.solve_in_place(&mut r);
        x.iter_mut().zip(&r).for_each(|(xi, ri)| *xi += ri);
    }
    let (r, _) = a.residual(&x, b);
    if !x.iter().all(|v| v.is_finite()) || inf_norm(&r) > 1e-10 * nb.max(f64::MIN_POSITIVE) {
        return Err(LinalgError::Singular { block: "direct".into(), reason: "residual check failed".into() });
    }
    Ok(x)
}

/// Statistics of a [`CachedSolver`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolverStats {
    pub factorizations: usize,
    pub solves: usize,
    pub refinement_sweeps: usize,
}

/// Direct solver that keeps its factors between calls.
///
/// Each call refines the iterate against the matrix it is given, using the
/// stored factors as a preconditioner. The factors are refreshed when they
/// stop contracting the residual quickly, so slowly varying matrices (one
/// per nonlinear iteration or time step) share one factorization.
#[derive(Debug)]
pub struct CachedSolver {
    block: String,
    factor: Option<LuFactor>,
    pub tolerance: f64,
    pub stats: SolverStats,
}

impl CachedSolver {
    pub fn new(block: &str) -> Self {
        Self { block: block.to_string(), factor: None, tolerance: 1e-13, stats: SolverStats::default() }
    }

    /// Drops the stored factors so the next solve refactors.
    pub fn invalidate(&mut self) {
        self.factor = None;
    }

    fn refactor(&mut self, a: &CsrMatrix) -> Result<(), LinalgError> {
        match &mut self.factor {
            Some(f) => f.refactor(a, &self.block)?,
            None => self.factor = Some(LuFactor::new(a, &self.block)?),
        }
        self.stats.factorizations += 1;
        Ok(())
    }

    pub fn solve(&mut self, a: &CsrMatrix, b: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>, LinalgError> {
        if b.len() != a.nrows {
            return Err(LinalgError::DimensionMismatch { expected: a.nrows, got: b.len() });
        }
        self.stats.solves += 1;
        let mut fresh = false;
        if self.factor.is_none() {
            self.refactor(a)?;
            fresh = true;
        }
        let mut x = match guess {
            Some(g) => g.to_vec(),
            None => vec![0.0; b.len()],
        };
        let (mut r, mut ax) = a.residual(&x, b);
        let mut err = backward_error(&r, b, &ax);
        let mut stalls = 0;
        for _ in 0..60 {
            if err <= self.tolerance {
                return Ok(x);
            }
            let f = self.factor.as_ref().expect("factor present");
            let mut d = r.clone();
            f.solve_in_place(&mut d);
            self.stats.refinement_sweeps += 1;
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + di).collect();
            let (r_new, ax_new) = a.residual(&trial, b);
            let err_new = backward_error(&r_new, b, &ax_new);
            let ratio = if err > 0.0 { err_new / err } else { 0.0 };
            if err_new.is_finite() && err_new < err {
                x = trial;
                r = r_new;
                ax = ax_new;
                err = err_new;
            }
            if ratio > 0.2 || !err_new.is_finite() {
                if !fresh {
                    self.refactor(a)?;
                    fresh = true;
                } else {
                    stalls += 1;
                    if stalls >= 3 {
                        break;
                    }
                }
            }
        }
        if err <= self.tolerance.max(1e-10) && x.iter().all(|v| v.is_finite()) {
            let _ = ax;
            return Ok(x);
        }
        Err(LinalgError::NotConverged { block: self.block.clone(), backward_error: err })
    }
}

/// Named contiguous segments of a block vector.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayout {
    blocks: Vec<(String, usize, usize)>,
}

impl BlockLayout {
    pub fn new(blocks: &[(&str, usize)]) -> Self {
        let mut off = 0;
        let blocks = blocks
            .iter()
            .map(|&(name, len)| {
                let b = (name.to_string(), off, len);
                off += len;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn total(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.1 + b.2)
    }

    pub fn offset(&self, name: &str) -> usize {
        self.find(name).1
    }

    pub fn len(&self, name: &str) -> usize {
        self.find(name).2
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn segment<'a>(&self, name: &str, v: &'a [f64]) -> &'a [f64] {
        let b = self.find(name);
        &v[b.1..b.1 + b.2]
    }

    pub fn segment_mut<'a>(&self, name: &str, v: &'a mut [f64]) -> &'a mut [f64] {
        let b = self.find(name);
        &mut v[b.1..b.1 + b.2]
    }

    /// Name of the block containing a global index.
    pub fn block_of(&self, i: usize) -> Option<&str> {
        self.blocks.iter().find(|b| i >= b.1 && i < b.1 + b.2).map(|b| b.0.as_str())
    }

    fn find(&self, name: &str) -> &(String, usize, usize) {
        self.blocks
            .iter()
            .find(|b| b.0 == name)
            .unwrap_or_else(|| panic!("no block named {name}"))
    }
}

/// Linear functional `x -> ∫ x` on a scalar space, used for mean-zero gauges.
#[derive(Clone, Debug)]
pub struct MeanFunctional {
    weights: Vec<f64>,
    area: f64,
}

impl MeanFunctional {
    pub fn new(space: &Arc<FESpace>) -> Self {
        let t = &space.tables;
        let mut weights = vec![0.0; space.n_scalar()];
        for cell in 0..space.mesh.n_cells() {
            let jac = space.geom(cell).jacobian();
            for (i, &d) in space.cell_dofs(cell).iter().enumerate() {
                for q in 0..t.n_qp() {
                    weights[d] += t.qweights[q] * jac * t.val[q * t.n_loc + i];
                }
            }
        }
        Self { weights, area: space.mesh.area() }
    }

    pub fn integral(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.integral(x) / self.area
    }

    /// Subtracts the mean; Lagrange spaces reproduce constants nodally.
    pub fn project(&self, x: &mut [f64]) {
        let m = self.mean(x);
        x.iter_mut().for_each(|v| *v -= m);
    }
}

/// Returns `x` minus its mean over the domain, for a scalar Lagrange space.
pub fn project_mean_zero(space: &Arc<FESpace>, x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    MeanFunctional::new(space).project(&mut out);
    out
}
