//! Regularization functionals with assembled derivatives.

pub mod qpact;
pub mod tv;

pub use qpact::{
    qpact_reg_eval, qpact_reg_gradient, qpact_reg_hessian_action, QpactRegSettings, QpactRegTerms,
    QpactRegularizer,
};
pub use tv::{tv_eval, tv_gradient, tv_hessian_action, tv_hessian_matrix, TvRegularizer, TvSettings};

use crate::fem::SparseOperator;
use crate::transform::BlockTransform;

/// Smooth regularization functional on parameter vectors.
pub trait Regularizer: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, m: &[f64]) -> f64;

    /// Assembled gradient (dual vector).
    fn gradient(&self, m: &[f64]) -> Vec<f64>;

    /// Assembled Hessian at `m`.
    fn hessian(&self, m: &[f64]) -> SparseOperator;

    /// Positive semidefinite approximation of the Hessian, used when the
    /// exact one is indefinite.
    fn hessian_psd(&self, m: &[f64]) -> SparseOperator {
        self.hessian(m)
    }

    fn hessian_action(&self, m: &[f64], dir: &[f64]) -> Vec<f64> {
        self.hessian(m).apply(dir)
    }

    /// Point at which the regularizer is centred, if it has one.
    fn prior(&self) -> Option<Vec<f64>>;
}

/// R∘T for a nodal transform T: evaluates a physical-space regularizer on
/// transformed parameters.
pub struct TransformedRegularizer<R> {
    inner: R,
    transform: BlockTransform,
}

impl<R: Regularizer> TransformedRegularizer<R> {
    pub fn new(inner: R, transform: BlockTransform) -> Self {
        assert_eq!(inner.dim(), transform.dim(), "transform and regularizer sizes differ");
        Self { inner, transform }
    }

    pub fn inner(&self) -> &R {
        &self.inner
    }

    pub fn transform(&self) -> &BlockTransform {
        &self.transform
    }

    fn hessian_impl(&self, x: &[f64], psd: bool) -> SparseOperator {
        let jet = self.transform.jet(x);
        let mut h = if psd {
            self.inner.hessian_psd(&jet.value)
        } else {
            self.inner.hessian(&jet.value)
        };
        h.scale_symmetric(&jet.first);
        let g = self.inner.gradient(&jet.value);
        let diag: Vec<f64> = g
            .iter()
            .zip(&jet.second)
            .map(|(g, d2)| if psd { (g * d2).max(0.0) } else { g * d2 })
            .collect();
        h.add_diagonal(&diag);
        h
    }
}

impl<R: Regularizer> Regularizer for TransformedRegularizer<R> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(&self.transform.forward(x))
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let jet = self.transform.jet(x);
        let g = self.inner.gradient(&jet.value);
        g.iter().zip(&jet.first).map(|(g, d)| g * d).collect()
    }

    fn hessian(&self, x: &[f64]) -> SparseOperator {
        self.hessian_impl(x, false)
    }

    fn hessian_psd(&self, x: &[f64]) -> SparseOperator {
        self.hessian_impl(x, true)
    }

    fn hessian_action(&self, x: &[f64], dir: &[f64]) -> Vec<f64> {
        let jet = self.transform.jet(x);
        let scaled: Vec<f64> = dir.iter().zip(&jet.first).map(|(d, j)| d * j).collect();
        let hv = self.inner.hessian_action(&jet.value, &scaled);
        let g = self.inner.gradient(&jet.value);
        (0..dir.len())
            .map(|i| jet.first[i] * hv[i] + g[i] * jet.second[i] * dir[i])
            .collect()
    }

    fn prior(&self) -> Option<Vec<f64>> {
        self.inner.prior().map(|p| self.transform.inverse(&p))
    }
}

/// Regularizer that is identically zero.
#[derive(Debug, Clone)]
pub struct NoRegularizer {
    pattern: std::sync::Arc<crate::fem::SparsityPattern>,
}

impl NoRegularizer {
    pub fn new(pattern: std::sync::Arc<crate::fem::SparsityPattern>) -> Self {
        Self { pattern }
    }
}

impl Regularizer for NoRegularizer {
    fn dim(&self) -> usize {
        self.pattern.dim()
    }

    fn value(&self, _m: &[f64]) -> f64 {
        0.0
    }

    fn gradient(&self, m: &[f64]) -> Vec<f64> {
        vec![0.0; m.len()]
    }

    fn hessian(&self, _m: &[f64]) -> SparseOperator {
        SparseOperator::zeros(self.pattern.clone())
    }

    fn prior(&self) -> Option<Vec<f64>> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_unit_square_mesh, FunctionSpace};
    use crate::transform::TransformKind;
    use std::sync::Arc;

    #[test]
    fn transformed_action_matches_matrix() {
        let space = Arc::new(FunctionSpace::new(Arc::new(build_unit_square_mesh(5).unwrap())).unwrap());
        let reg = QpactRegularizer::new(space.clone(), QpactRegSettings::default()).unwrap();
        let t = BlockTransform::new(
            vec![TransformKind::Logit, TransformKind::Log, TransformKind::Log],
            space.dim(),
        );
        let reg = TransformedRegularizer::new(reg, t);
        let x: Vec<f64> = (0..reg.dim()).map(|i| 0.5 * (i as f64 * 0.3).sin()).collect();
        let v: Vec<f64> = (0..reg.dim()).map(|i| (i as f64 * 0.7).cos()).collect();
        let a = reg.hessian_action(&x, &v);
        let b = reg.hessian(&x).apply(&v);
        for (a, b) in a.iter().zip(&b) {
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }
}
