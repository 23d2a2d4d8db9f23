//! INCG on the full objective (1/q)Σᵢ𝓛ᵢ(m) + 𝓡(m), the baseline for ADMM.

use crate::error::Result;
use crate::fem::Factorization;
use crate::incg::{self, IncgResult, IncgSettings, Objective};
use crate::metric::{axpy, Metric};
use crate::model::{HessianMode, InversionModel, SolveCounters};
use crate::parallel::{map_mut, ExecMode};
use crate::regularization::Regularizer;

pub struct MonolithicObjective<'a, M> {
    models: &'a mut [M],
    reg: &'a dyn Regularizer,
    precond: Factorization,
    exec: ExecMode,
    point: Vec<f64>,
}

impl<'a, M: InversionModel> MonolithicObjective<'a, M> {
    /// Preconditions with 𝓡'' at the regularizer's prior (or `m0`) plus a
    /// small multiple of the metric, raised until the factorization succeeds.
    pub fn new(models: &'a mut [M], reg: &'a dyn Regularizer, metric: &Metric, m0: &[f64], exec: ExecMode) -> Result<Self> {
        let at = reg.prior().unwrap_or_else(|| m0.to_vec());
        let mut p = reg.hessian_psd(&at);
        let w = metric.operator();
        let tr_r: f64 = p.diagonal().iter().map(|v| v.abs()).sum();
        let tr_w: f64 = w.diagonal().iter().sum();
        let mut shift = if tr_r > 0.0 { 1e-8 * tr_r / tr_w } else { 1.0 };
        p.axpy(shift, w);
        let mut precond = Factorization::new(&p, &[]);
        for _ in 0..6 {
            if precond.is_ok() {
                break;
            }
            p.axpy(99.0 * shift, w);
            shift *= 100.0;
            precond = Factorization::new(&p, &[]);
        }
        log::debug!("monolithic preconditioner shift {shift:.3e}");
        Ok(Self {
            precond: precond?,
            models,
            reg,
            exec,
            point: m0.to_vec(),
        })
    }

    fn scale(&self) -> f64 {
        1.0 / self.models.len() as f64
    }
}

impl<M: InversionModel> Objective for MonolithicObjective<'_, M> {
    fn cost(&mut self, m: &[f64]) -> Result<f64> {
        let costs = map_mut(self.models, self.exec, |_, model| model.cost(m));
        let mut total = 0.0;
        for c in costs {
            total += c?;
        }
        Ok(total * self.scale() + self.reg.value(m))
    }

    fn gradient(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        let parts = map_mut(self.models, self.exec, |_, model| model.gradient(m));
        let s = self.scale();
        let mut cost = 0.0;
        let mut g = self.reg.gradient(m);
        for part in parts {
            let (c, gi) = part?;
            cost += c * s;
            axpy(&mut g, s, &gi);
        }
        self.point = m.to_vec();
        Ok((cost + self.reg.value(m), g))
    }

    fn hessian_action(&mut self, dir: &[f64], mode: HessianMode) -> Result<Vec<f64>> {
        let parts = map_mut(self.models, self.exec, |_, model| model.hessian_action(dir, mode));
        let s = self.scale();
        let mut h = self.reg.hessian_action(&self.point, dir);
        for part in parts {
            axpy(&mut h, s, &part?);
        }
        Ok(h)
    }

    fn precondition(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.precond.solve_approximate(r)
    }

    fn counters(&self) -> SolveCounters {
        self.models.iter().map(|m| m.counters()).sum()
    }
}

/// Runs INCG on the monolithic objective from `m0`.
pub fn monolithic_solve<M: InversionModel>(
    models: &mut [M],
    reg: &dyn Regularizer,
    settings: &IncgSettings,
    metric: &Metric,
    m0: &[f64],
    exec: ExecMode,
) -> Result<IncgResult> {
    let mut obj = MonolithicObjective::new(models, reg, metric, m0, exec)?;
    incg::solve(&mut obj, m0, settings, metric)
}
