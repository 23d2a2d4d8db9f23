use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{Factorization, FunctionSpace, NormKind, SparseOperator};

/// Block-diagonal inner product on parameter vectors made of `blocks`
/// stacked nodal fields.
///
/// Gradients are dual (assembled) vectors; their norm is measured through
/// the inverse metric, so `dual_norm(W m) == norm(m)`.
#[derive(Debug)]
pub struct Metric {
    space: Arc<FunctionSpace>,
    blocks: usize,
    kind: NormKind,
    operator: SparseOperator,
    factor: Factorization,
}

impl Metric {
    pub fn new(space: Arc<FunctionSpace>, blocks: usize, kind: NormKind) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::InvalidSettings("metric needs at least one block".into()));
        }
        let single = space.metric_operator(kind);
        let operator = if blocks == 1 {
            single
        } else {
            let pattern = space.block_pattern(blocks);
            let parts: Vec<&SparseOperator> = (0..blocks).map(|_| &single).collect();
            SparseOperator::block_diagonal(pattern, &parts)
        };
        let factor = Factorization::new(&operator, &[])?;
        Ok(Self {
            space,
            blocks,
            kind,
            operator,
            factor,
        })
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.operator
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.operator.bilinear(a, b)
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    pub fn norm_sq(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0)
    }

    /// W·v
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.operator.apply(v)
    }

    /// W⁻¹·g
    pub fn riesz(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.factor.solve(g)
    }

    /// √(gᵀ W⁻¹ g)
    pub fn dual_norm(&self, g: &[f64]) -> Result<f64> {
        let r = self.riesz(g)?;
        Ok(dot(g, &r).max(0.0).sqrt())
    }

    pub fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_unit_disc_mesh;

    #[test]
    fn dual_norm_matches_primal_norm() {
        let space = Arc::new(FunctionSpace::new(Arc::new(build_unit_disc_mesh(2).unwrap())).unwrap());
        for kind in [NormKind::L2, NormKind::H1] {
            let metric = Metric::new(space.clone(), 2, kind).unwrap();
            let m: Vec<f64> = (0..metric.dim()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
            let g = metric.apply(&m);
            let a = metric.dual_norm(&g).unwrap();
            assert!((a - metric.norm(&m)).abs() < 1e-10 * a);
        }
    }

    #[test]
    fn block_norm_is_sum_of_block_norms() {
        let space = Arc::new(FunctionSpace::new(Arc::new(build_unit_disc_mesh(2).unwrap())).unwrap());
        let n = space.dim();
        let metric = Metric::new(space.clone(), 3, NormKind::H1).unwrap();
        let m: Vec<f64> = (0..3 * n).map(|i| (i as f64 * 0.37).sin()).collect();
        let parts: f64 = (0..3)
            .map(|b| space.inner_product(&m[b * n..(b + 1) * n], &m[b * n..(b + 1) * n], NormKind::H1).unwrap())
            .sum();
        assert!((metric.norm_sq(&m) - parts).abs() < 1e-12 * parts);
    }
}
