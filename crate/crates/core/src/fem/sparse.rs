use std::sync::{Arc, OnceLock};

use sprs::{CsMat, FillInReduction, SymmetryCheck};
use sprs_ldl::{Ldl, LdlNumeric, LdlSymbolic};

use crate::error::{Error, Result};

/// Relative residual every direct solve must reach.
pub const SOLVE_RTOL: f64 = 1e-10;

const MAX_REFINEMENT_STEPS: usize = 3;

/// Compressed-row structure shared by every operator assembled on one mesh.
#[derive(Debug)]
pub struct SparsityPattern {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    symbolic: OnceLock<LdlSymbolic<usize>>,
}

impl SparsityPattern {
    /// Builds a pattern from per-row column lists. Each row is sorted and deduplicated.
    pub fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        Self {
            row_offsets,
            col_indices,
            symbolic: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Position of entry (row, col) in the value array.
    pub fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.row_offsets[row]..self.row_offsets[row + 1];
        self.col_indices[range.clone()]
            .binary_search(&col)
            .ok()
            .map(|k| range.start + k)
    }

    /// Block-diagonal pattern with `blocks` copies of `self`.
    pub fn block_diagonal(&self, blocks: usize) -> Self {
        let n = self.dim();
        let rows = (0..blocks * n)
            .map(|r| {
                let (b, i) = (r / n, r % n);
                self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
                    .iter()
                    .map(|&c| b * n + c)
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    fn symbolic(&self, mat: &CsMat<f64>) -> LdlSymbolic<usize> {
        self.symbolic
            .get_or_init(|| {
                Ldl::new()
                    .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
                    .check_symmetry(SymmetryCheck::DontCheckSymmetry)
                    .symbolic(mat.view())
            })
            .clone()
    }
}

/// Symmetric sparse matrix in compressed-row layout.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SparseOperator {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn from_parts(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::DimensionMismatch {
                expected: pattern.nnz(),
                got: values.len(),
            });
        }
        Ok(Self { pattern, values })
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn row_offsets(&self) -> &[usize] {
        self.pattern.row_offsets()
    }

    pub fn col_indices(&self) -> &[usize] {
        self.pattern.col_indices()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.slot(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let (rp, ci) = (self.row_offsets(), self.col_indices());
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (rp[i]..rp[i + 1])
                .map(|k| self.values[k] * x[ci[k]])
                .sum();
        }
    }

    /// xᵀ A y
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let (rp, ci) = (self.row_offsets(), self.col_indices());
        (0..self.dim())
            .map(|i| {
                x[i] * (rp[i]..rp[i + 1])
                    .map(|k| self.values[k] * y[ci[k]])
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    /// self += a·other. Both operators must share a pattern.
    pub fn axpy(&mut self, a: f64, other: &SparseOperator) {
        assert!(
            Arc::ptr_eq(&self.pattern, &other.pattern),
            "axpy requires a shared sparsity pattern"
        );
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(v, o)| *v += a * o);
    }

    /// Adds `d[i]` to each diagonal entry.
    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, di) in d.iter().enumerate() {
            let k = self.pattern.slot(i, i).expect("pattern stores the diagonal");
            self.values[k] += di;
        }
    }

    /// A ← diag(d)·A·diag(d).
    pub fn scale_symmetric(&mut self, d: &[f64]) {
        let pattern = self.pattern.clone();
        let (rp, ci) = (pattern.row_offsets(), pattern.col_indices());
        for i in 0..self.dim() {
            for k in rp[i]..rp[i + 1] {
                self.values[k] *= d[i] * d[ci[k]];
            }
        }
    }

    /// Largest |A_ij − A_ji|.
    pub fn symmetry_defect(&self) -> f64 {
        let (rp, ci) = (self.row_offsets(), self.col_indices());
        let mut worst = 0.0_f64;
        for i in 0..self.dim() {
            for k in rp[i]..rp[i + 1] {
                worst = worst.max((self.values[k] - self.get(ci[k], i)).abs());
            }
        }
        worst
    }

    /// Block-diagonal operator from same-pattern blocks.
    pub fn block_diagonal(pattern: Arc<SparsityPattern>, blocks: &[&SparseOperator]) -> Self {
        let values = blocks.iter().flat_map(|b| b.values.iter().copied()).collect();
        Self { pattern, values }
    }

    /// Dense copy, for small-problem diagnostics and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        let (rp, ci) = (self.row_offsets(), self.col_indices());
        for (i, row) in d.iter_mut().enumerate() {
            for k in rp[i]..rp[i + 1] {
                row[ci[k]] = self.values[k];
            }
        }
        d
    }

    fn to_csmat(&self) -> CsMat<f64> {
        let n = self.dim();
        CsMat::new(
            (n, n),
            self.row_offsets().to_vec(),
            self.col_indices().to_vec(),
            self.values.clone(),
        )
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Factorization of a symmetric positive definite operator with Dirichlet
/// rows and columns eliminated.
///
/// Dirichlet elimination zeroes the constrained rows and columns, keeps the
/// diagonal, and moves the known values to the right-hand side, so the reduced
/// matrix stays symmetric positive definite.
pub struct Factorization {
    original: SparseOperator,
    reduced: SparseOperator,
    numeric: LdlNumeric<f64, usize>,
    fixed: Vec<usize>,
    is_fixed: Vec<bool>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("dim", &self.original.dim())
            .field("fixed", &self.fixed)
            .finish()
    }
}

impl Factorization {
    pub fn new(a: &SparseOperator, dirichlet_nodes: &[usize]) -> Result<Self> {
        let n = a.dim();
        let mut is_fixed = vec![false; n];
        for &i in dirichlet_nodes {
            if i >= n {
                return Err(Error::DimensionMismatch { expected: n, got: i });
            }
            is_fixed[i] = true;
        }
        let mut reduced = a.clone();
        let (rp, ci) = (a.row_offsets(), a.col_indices());
        for i in 0..n {
            for k in rp[i]..rp[i + 1] {
                let j = ci[k];
                if (is_fixed[i] || is_fixed[j]) && i != j {
                    reduced.values[k] = 0.0;
                }
            }
        }
        for &i in dirichlet_nodes {
            let k = a.pattern.slot(i, i).expect("pattern stores the diagonal");
            if reduced.values[k] == 0.0 {
                reduced.values[k] = 1.0;
            }
        }
        let csmat = reduced.to_csmat();
        let symbolic = a.pattern.symbolic(&csmat);
        let numeric = symbolic.factor(csmat.view()).map_err(|e| Error::LinearSolve {
            reason: format!("factorization failed: {e}"),
            residual: f64::INFINITY,
        })?;
        if let Some((k, d)) = numeric
            .d()
            .iter()
            .enumerate()
            .find(|(_, d)| !(**d > 0.0) || !d.is_finite())
        {
            return Err(Error::LinearSolve {
                reason: format!("matrix is not positive definite (pivot {k} = {d:e})"),
                residual: f64::INFINITY,
            });
        }
        Ok(Self {
            original: a.clone(),
            reduced,
            numeric,
            fixed: dirichlet_nodes.to_vec(),
            is_fixed,
        })
    }

    pub fn dim(&self) -> usize {
        self.original.dim()
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.original
    }

    /// Solves with homogeneous Dirichlet values.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_with_values(rhs, &vec![0.0; self.fixed.len()])
    }

    /// Solves A x = rhs on free rows with x[fixed[k]] = values[k].
    pub fn solve_with_values(&self, rhs: &[f64], values: &[f64]) -> Result<Vec<f64>> {
        let (x, residual) = self.refined_solve(rhs, values)?;
        if residual <= SOLVE_RTOL {
            return Ok(x);
        }
        Err(Error::LinearSolve {
            reason: "residual above tolerance after iterative refinement".into(),
            residual,
        })
    }

    /// Like [`Factorization::solve`] but returns the refined iterate whatever
    /// its residual; meant for preconditioning.
    pub fn solve_approximate(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let (x, residual) = self.refined_solve(rhs, &vec![0.0; self.fixed.len()])?;
        if !residual.is_finite() {
            return Err(Error::LinearSolve {
                reason: "non-finite residual".into(),
                residual,
            });
        }
        Ok(x)
    }

    fn refined_solve(&self, rhs: &[f64], values: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: rhs.len(),
            });
        }
        let mut known = vec![0.0; n];
        for (&i, &v) in self.fixed.iter().zip(values) {
            known[i] = v;
        }
        let correction = self.original.apply(&known);
        let mut b: Vec<f64> = rhs.iter().zip(&correction).map(|(r, c)| r - c).collect();
        for &i in &self.fixed {
            b[i] = self.reduced.get(i, i) * known[i];
        }
        let bnorm = norm(&b);
        if bnorm == 0.0 {
            return Ok((vec![0.0; n], 0.0));
        }
        let mut x = self.numeric.solve(&b);
        let mut best = (x.clone(), f64::INFINITY);
        for _ in 0..=MAX_REFINEMENT_STEPS {
            let ax = self.reduced.apply(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let residual = norm(&r) / bnorm;
            if !residual.is_finite() {
                break;
            }
            if residual < best.1 {
                best = (x.clone(), residual);
            }
            if residual <= SOLVE_RTOL {
                break;
            }
            let dx = self.numeric.solve(&r);
            x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        }
        for &i in &self.fixed {
            best.0[i] = known[i];
        }
        Ok(best)
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.is_fixed[i]
    }
}

/// One-shot solve of A x = rhs with prescribed Dirichlet values.
pub fn solve_sparse(a: &SparseOperator, rhs: &[f64], dirichlet: &[(usize, f64)]) -> Result<Vec<f64>> {
    let nodes: Vec<usize> = dirichlet.iter().map(|d| d.0).collect();
    let values: Vec<f64> = dirichlet.iter().map(|d| d.1).collect();
    Factorization::new(a, &nodes)?.solve_with_values(rhs, &values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, diag: f64, off: f64) -> SparseOperator {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![i];
                if i > 0 {
                    r.push(i - 1);
                }
                if i + 1 < n {
                    r.push(i + 1);
                }
                r
            })
            .collect();
        let pattern = Arc::new(SparsityPattern::from_rows(rows));
        let mut a = SparseOperator::zeros(pattern.clone());
        for i in 0..n {
            a.values[pattern.slot(i, i).unwrap()] = diag;
            if i + 1 < n {
                a.values[pattern.slot(i, i + 1).unwrap()] = off;
                a.values[pattern.slot(i + 1, i).unwrap()] = off;
            }
        }
        a
    }

    #[test]
    fn solve_recovers_known_vector() {
        let a = tridiag(20, 4.0, -1.0);
        let w: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
        let b = a.apply(&w);
        let x = solve_sparse(&a, &b, &[]).unwrap();
        for (x, w) in x.iter().zip(&w) {
            assert!((x - w).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_value_is_exact() {
        let a = tridiag(10, 2.0, -1.0);
        let x = solve_sparse(&a, &[0.0; 10], &[(0, 3.7), (9, -1.0)]).unwrap();
        assert_eq!(x[0], 3.7);
        assert_eq!(x[9], -1.0);
        // discrete Laplacian with zero load: linear interpolation
        let expect = 3.7 + (-1.0 - 3.7) * 4.0 / 9.0;
        assert!((x[4] - expect).abs() < 1e-12);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = tridiag(5, -2.0, 0.5);
        let err = solve_sparse(&a, &[1.0; 5], &[]).unwrap_err();
        assert!(matches!(err, Error::LinearSolve { .. }));
    }

    #[test]
    fn block_diagonal_pattern_replicates() {
        let a = tridiag(4, 2.0, -1.0);
        let p = Arc::new(a.pattern().block_diagonal(2));
        let b = SparseOperator::block_diagonal(p, &[&a, &a]);
        assert_eq!(b.dim(), 8);
        assert_eq!(b.get(5, 6), -1.0);
        assert_eq!(b.get(3, 4), 0.0);
    }
}
