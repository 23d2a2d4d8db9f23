use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::{BlockTransform, TransformJet};

/// Tallies of PDE solves performed by a model.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveCounters {
    pub forward: u64,
    pub adjoint: u64,
    pub incremental: u64,
}

impl Add for SolveCounters {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            forward: self.forward + o.forward,
            adjoint: self.adjoint + o.adjoint,
            incremental: self.incremental + o.incremental,
        }
    }
}

impl AddAssign for SolveCounters {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for SolveCounters {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            forward: self.forward - o.forward,
            adjoint: self.adjoint - o.adjoint,
            incremental: self.incremental - o.incremental,
        }
    }
}

impl Sum for SolveCounters {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    #[default]
    Full,
    GaussNewton,
}

/// One forward model with its data: misfit, adjoint gradient and Hessian action.
///
/// `hessian_action` linearizes at the point of the most recent `gradient` call.
pub trait InversionModel: Send {
    /// Length of the parameter vector.
    fn dim(&self) -> usize;

    /// Misfit at `m`. One forward solve.
    fn cost(&mut self, m: &[f64]) -> Result<f64>;

    /// Misfit and assembled gradient at `m`. One forward and one adjoint solve.
    fn gradient(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Hessian of the misfit applied to `dir`. Two incremental solves.
    fn hessian_action(&mut self, dir: &[f64], mode: HessianMode) -> Result<Vec<f64>>;

    fn counters(&self) -> SolveCounters;

    /// Factor w such that ‖f(m) − d‖² = w · misfit.
    fn misfit_weight(&self) -> f64;
}

impl<T: InversionModel + ?Sized> InversionModel for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn cost(&mut self, m: &[f64]) -> Result<f64> {
        (**self).cost(m)
    }
    fn gradient(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).gradient(m)
    }
    fn hessian_action(&mut self, dir: &[f64], mode: HessianMode) -> Result<Vec<f64>> {
        (**self).hessian_action(dir, mode)
    }
    fn counters(&self) -> SolveCounters {
        (**self).counters()
    }
    fn misfit_weight(&self) -> f64 {
        (**self).misfit_weight()
    }
}

/// Model seen through a nodal reparameterization: x ↦ L(T(x)).
pub struct Reparameterized<M> {
    inner: M,
    transform: BlockTransform,
    cache: Option<(TransformJet, Vec<f64>)>,
}

impl<M: InversionModel> Reparameterized<M> {
    pub fn new(inner: M, transform: BlockTransform) -> Self {
        assert_eq!(inner.dim(), transform.dim(), "transform and model sizes differ");
        Self {
            inner,
            transform,
            cache: None,
        }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut M {
        self.cache = None;
        &mut self.inner
    }

    pub fn transform(&self) -> &BlockTransform {
        &self.transform
    }
}

impl<M: InversionModel> InversionModel for Reparameterized<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn cost(&mut self, x: &[f64]) -> Result<f64> {
        self.inner.cost(&self.transform.forward(x))
    }

    fn gradient(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let jet = self.transform.jet(x);
        let (cost, g) = self.inner.gradient(&jet.value)?;
        let gx = g.iter().zip(&jet.first).map(|(g, d)| g * d).collect();
        self.cache = Some((jet, g));
        Ok((cost, gx))
    }

    fn hessian_action(&mut self, dir: &[f64], mode: HessianMode) -> Result<Vec<f64>> {
        let (jet, g) = self
            .cache
            .as_ref()
            .ok_or(Error::MissingState("Hessian action requires a prior gradient call"))?;
        let scaled: Vec<f64> = dir.iter().zip(&jet.first).map(|(v, d)| v * d).collect();
        let hy = self.inner.hessian_action(&scaled, mode)?;
        let mut out: Vec<f64> = hy.iter().zip(&jet.first).map(|(h, d)| h * d).collect();
        if mode == HessianMode::Full {
            for i in 0..out.len() {
                out[i] += g[i] * jet.second[i] * dir[i];
            }
        }
        Ok(out)
    }

    fn counters(&self) -> SolveCounters {
        self.inner.counters()
    }

    fn misfit_weight(&self) -> f64 {
        self.inner.misfit_weight()
    }
}
