//! Scaled consensus ADMM over several forward models sharing one parameter.
//!
//! Each model i keeps its own copy mᵢ; all copies are pulled towards the
//! consensus z, which alone carries the regularizer:
//!
//! min Σᵢ (1/q)[𝓛ᵢ(mᵢ) + (ρ/2)‖mᵢ − z + uᵢ‖²] + 𝓡(z).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Factorization, NormKind, SparseOperator};
use crate::incg::{self, IncgResult, IncgSettings, Objective};
use crate::metric::{axpy, dot, sub, Metric};
use crate::model::{HessianMode, InversionModel, SolveCounters};
use crate::parallel::{map_mut, ExecMode};
use crate::regularization::Regularizer;

/// Damped Newton settings for the consensus update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZSolverSettings {
    pub grad_abs_tol: f64,
    pub grad_rel_tol: f64,
    pub max_iter: usize,
}

impl Default for ZSolverSettings {
    fn default() -> Self {
        Self {
            grad_abs_tol: 1e-12,
            grad_rel_tol: 1e-9,
            max_iter: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmSettings {
    pub rho0: f64,
    pub mu: f64,
    pub tau: f64,
    pub adaptive_rho: bool,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_global_iter: usize,
    pub consensus_norm: NormKind,
    pub subproblem: IncgSettings,
    pub z_solver: ZSolverSettings,
    pub exec: ExecMode,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho0: 0.1,
            mu: 2.0,
            tau: 3.0,
            adaptive_rho: true,
            eps_abs: 1e-5,
            eps_rel: 2e-2,
            max_global_iter: 50,
            consensus_norm: NormKind::H1,
            subproblem: IncgSettings {
                max_iter: 10,
                ..IncgSettings::default()
            },
            z_solver: ZSolverSettings::default(),
            exec: ExecMode::Parallel,
        }
    }
}

impl AdmmSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0) {
            return Err(Error::InvalidSettings("rho0 must be positive".into()));
        }
        if !(self.mu > 1.0 && self.tau > 1.0) {
            return Err(Error::InvalidSettings("mu and tau must exceed 1".into()));
        }
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return Err(Error::InvalidSettings("ADMM tolerances must be positive".into()));
        }
        if self.z_solver.max_iter == 0 {
            return Err(Error::InvalidSettings("z solver needs at least one iteration".into()));
        }
        self.subproblem.validate()
    }
}

/// (1/q)[𝓛(m) + (ρ/2)‖m − c‖²_W] with c = z − uᵢ.
pub struct SubproblemObjective<'a, M> {
    model: &'a mut M,
    center: Vec<f64>,
    rho: f64,
    q: usize,
    metric: &'a Metric,
}

impl<'a, M: InversionModel> SubproblemObjective<'a, M> {
    pub fn new(model: &'a mut M, z: &[f64], u: &[f64], rho: f64, q: usize, metric: &'a Metric) -> Self {
        Self {
            model,
            center: sub(z, u),
            rho,
            q,
            metric,
        }
    }

    /// (ρ/2)‖m − c‖²_W.
    pub fn penalty(&self, m: &[f64]) -> f64 {
        0.5 * self.rho * self.metric.norm_sq(&sub(m, &self.center))
    }
}

impl<M: InversionModel> Objective for SubproblemObjective<'_, M> {
    fn cost(&mut self, m: &[f64]) -> Result<f64> {
        Ok((self.model.cost(m)? + self.penalty(m)) / self.q as f64)
    }

    fn gradient(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (c, mut g) = self.model.gradient(m)?;
        axpy(&mut g, self.rho, &self.metric.apply(&sub(m, &self.center)));
        let inv_q = 1.0 / self.q as f64;
        g.iter_mut().for_each(|v| *v *= inv_q);
        Ok(((c + self.penalty(m)) * inv_q, g))
    }

    fn hessian_action(&mut self, dir: &[f64], mode: HessianMode) -> Result<Vec<f64>> {
        let mut h = self.model.hessian_action(dir, mode)?;
        axpy(&mut h, self.rho, &self.metric.apply(dir));
        let inv_q = 1.0 / self.q as f64;
        h.iter_mut().for_each(|v| *v *= inv_q);
        Ok(h)
    }

    fn precondition(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.metric.riesz(r)?;
        let s = self.q as f64 / if self.rho > 0.0 { self.rho } else { 1.0 };
        x.iter_mut().for_each(|v| *v *= s);
        Ok(x)
    }

    fn counters(&self) -> SolveCounters {
        self.model.counters()
    }
}

/// Approximately minimizes the i-th subproblem starting from `m_start`.
#[allow(clippy::too_many_arguments)]
pub fn subproblem_solve<M: InversionModel>(
    model: &mut M,
    z: &[f64],
    u: &[f64],
    rho: f64,
    q: usize,
    settings: &IncgSettings,
    metric: &Metric,
    m_start: &[f64],
) -> Result<IncgResult> {
    let mut obj = SubproblemObjective::new(model, z, u, rho, q, metric);
    incg::solve(&mut obj, m_start, settings, metric)
}

/// Outcome of a consensus update.
#[derive(Debug, Clone)]
pub struct ZUpdate {
    pub z: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

/// Damped Newton with an assembled Hessian and Armijo backtracking.
fn newton_minimize(
    value: impl Fn(&[f64]) -> f64,
    gradient: impl Fn(&[f64]) -> Vec<f64>,
    hessian: impl Fn(&[f64], bool) -> SparseOperator,
    start: &[f64],
    metric: &Metric,
    settings: &ZSolverSettings,
) -> Result<ZUpdate> {
    let mut z = start.to_vec();
    let mut f = value(&z);
    let mut g = gradient(&z);
    let mut gnorm = metric.dual_norm(&g)?;
    let tol = settings.grad_abs_tol + settings.grad_rel_tol * gnorm;
    let mut it = 0;
    while gnorm > tol && it < settings.max_iter {
        let factor = match Factorization::new(&hessian(&z, false), &[]) {
            Ok(f) => f,
            Err(_) => Factorization::new(&hessian(&z, true), &[])?,
        };
        let mut dir = factor.solve(&g)?;
        dir.iter_mut().for_each(|v| *v = -*v);
        let slope = dot(&g, &dir);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            let ft = value(&trial);
            if ft <= f + 1e-4 * alpha * slope {
                z = trial;
                f = ft;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        it += 1;
        if !accepted {
            break;
        }
        g = gradient(&z);
        gnorm = metric.dual_norm(&g)?;
    }
    let converged = gnorm <= tol;
    if !converged {
        log::debug!("z-update stopped after {it} Newton steps with |g| = {gnorm:.3e}");
    }
    Ok(ZUpdate {
        z,
        iterations: it,
        converged,
        grad_norm: gnorm,
    })
}

/// argmin_z 𝓡(z) + (ρ/2)‖m̄ + ū − z‖²_W.
pub fn z_update(
    reg: &dyn Regularizer,
    m_bar: &[f64],
    u_bar: &[f64],
    rho: f64,
    metric: &Metric,
    settings: &ZSolverSettings,
) -> Result<ZUpdate> {
    let target: Vec<f64> = m_bar.iter().zip(u_bar).map(|(m, u)| m + u).collect();
    newton_minimize(
        |z| reg.value(z) + 0.5 * rho * metric.norm_sq(&sub(&target, z)),
        |z| {
            let mut g = reg.gradient(z);
            axpy(&mut g, rho, &metric.apply(&sub(z, &target)));
            g
        },
        |z, psd| {
            let mut h = if psd { reg.hessian_psd(z) } else { reg.hessian(z) };
            h.axpy(rho, metric.operator());
            h
        },
        &target,
        metric,
        settings,
    )
}

/// argmin_z 𝓡(z) + Σᵢ (ρ/2q)‖mᵢ − z + uᵢ‖²_W, without forming the mean.
pub fn z_update_direct(
    reg: &dyn Regularizer,
    ms: &[Vec<f64>],
    us: &[Vec<f64>],
    rho: f64,
    metric: &Metric,
    settings: &ZSolverSettings,
) -> Result<ZUpdate> {
    let q = ms.len() as f64;
    let start = ms[0].clone();
    newton_minimize(
        |z| {
            let mut v = reg.value(z);
            for (m, u) in ms.iter().zip(us) {
                let d: Vec<f64> = (0..z.len()).map(|j| m[j] - z[j] + u[j]).collect();
                v += rho / (2.0 * q) * metric.norm_sq(&d);
            }
            v
        },
        |z| {
            let mut g = reg.gradient(z);
            for (m, u) in ms.iter().zip(us) {
                let d: Vec<f64> = (0..z.len()).map(|j| z[j] - m[j] - u[j]).collect();
                axpy(&mut g, rho / q, &metric.apply(&d));
            }
            g
        },
        |z, psd| {
            let mut h = if psd { reg.hessian_psd(z) } else { reg.hessian(z) };
            for _ in 0..ms.len() {
                h.axpy(rho / q, metric.operator());
            }
            h
        },
        &start,
        metric,
        settings,
    )
}

/// (√((1/q)Σ‖mᵢ − z‖²), ρ‖z − z_prev‖).
pub fn residuals(ms: &[Vec<f64>], z: &[f64], z_prev: &[f64], rho: f64, metric: &Metric) -> (f64, f64) {
    let r2: f64 = ms.iter().map(|m| metric.norm_sq(&sub(m, z))).sum::<f64>() / ms.len() as f64;
    (r2.sqrt(), rho * metric.norm(&sub(z, z_prev)))
}

/// New penalty and the factor ρ_old/ρ_new by which scaled duals are multiplied.
pub fn update_rho(rho: f64, r_norm: f64, s_norm: f64, mu: f64, tau: f64) -> (f64, f64) {
    let new = if r_norm > mu * s_norm {
        tau * rho
    } else if s_norm > mu * r_norm {
        rho / tau
    } else {
        rho
    };
    (new, rho / new)
}

/// Both residual tests, inclusive.
pub fn check_convergence(r_norm: f64, s_norm: f64, m_norm: f64, z_norm: f64, eps_abs: f64, eps_rel: f64) -> bool {
    r_norm <= eps_abs + eps_rel * m_norm && s_norm <= eps_abs + eps_rel * z_norm
}

/// One row of the convergence history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmmRecord {
    pub k: usize,
    /// Penalty used during this iteration.
    pub rho: f64,
    pub r_norm: f64,
    pub s_norm: f64,
    /// (1/q)Σ𝓛ᵢ(mᵢ) + 𝓡(z).
    pub cost: f64,
    pub rel_error: Option<f64>,
    /// Cumulative over all models.
    pub counters: SolveCounters,
    /// Augmented Lagrangian at (mᵏ, zᵏ, uᵏ) and at (mᵏ⁺¹, zᵏ⁺¹, uᵏ).
    pub lagrangian_start: f64,
    pub lagrangian_end: f64,
    pub failed_subproblems: usize,
    pub z_converged: bool,
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub m: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub rho: f64,
    pub k: usize,
    pub converged: bool,
    pub history: Vec<AdmmRecord>,
    /// Model counters when the run started; records are relative to these.
    pub counters_start: SolveCounters,
}

impl AdmmState {
    pub fn new(q: usize, m0: &[f64], rho0: f64) -> Self {
        Self {
            m: vec![m0.to_vec(); q],
            z: m0.to_vec(),
            u: vec![vec![0.0; m0.len()]; q],
            rho: rho0,
            k: 0,
            converged: false,
            history: Vec::new(),
            counters_start: SolveCounters::default(),
        }
    }

    /// √((1/q)Σ‖mᵢ‖²).
    pub fn m_norm(&self, metric: &Metric) -> f64 {
        (self.m.iter().map(|m| metric.norm_sq(m)).sum::<f64>() / self.m.len() as f64).sqrt()
    }
}

/// Optional per-iteration error against a known truth.
pub type ErrorMonitor<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Runs consensus ADMM from mᵢ = z = m0, uᵢ = 0.
pub fn run<M: InversionModel>(
    models: &mut [M],
    reg: &dyn Regularizer,
    settings: &AdmmSettings,
    metric: &Metric,
    m0: &[f64],
    monitor: Option<ErrorMonitor<'_>>,
) -> Result<AdmmState> {
    settings.validate()?;
    metric.check_len(m0)?;
    let q = models.len();
    if q == 0 {
        return Err(Error::InvalidSettings("ADMM needs at least one model".into()));
    }
    let mut st = AdmmState::new(q, m0, settings.rho0);
    st.counters_start = models.iter().map(|m| m.counters()).sum();
    while st.k < settings.max_global_iter && !st.converged {
        step(models, reg, settings, metric, &mut st, monitor)?;
    }
    Ok(st)
}

/// One global iteration: subproblems, consensus, duals, residuals, penalty.
pub fn step<M: InversionModel>(
    models: &mut [M],
    reg: &dyn Regularizer,
    settings: &AdmmSettings,
    metric: &Metric,
    st: &mut AdmmState,
    monitor: Option<ErrorMonitor<'_>>,
) -> Result<()> {
    let q = models.len();
    let qf = q as f64;
    let rho = st.rho;
    let (z, u, m) = (&st.z, &st.u, &st.m);
    let results = map_mut(models, settings.exec, |i, model| {
        subproblem_solve(model, z, &u[i], rho, q, &settings.subproblem, metric, &m[i])
    });

    let u_sq: f64 = st.u.iter().map(|u| metric.norm_sq(u)).sum();
    let mut start_sum = 0.0;
    let mut misfit_sum = 0.0;
    let mut failed = 0;
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(r) => {
                start_sum += r.cost_history[0];
                let center = sub(&st.z, &st.u[i]);
                let pen = 0.5 * rho * metric.norm_sq(&sub(&r.m, &center));
                misfit_sum += r.final_cost * qf - pen;
                st.m[i] = r.m;
            }
            Err(e) => {
                log::warn!("subproblem {i} failed at global iteration {}: {e}", st.k);
                failed += 1;
            }
        }
    }
    if failed == q {
        return Err(Error::AllSubproblemsFailed(q));
    }
    if failed > 0 {
        // failed models keep their iterate; evaluate their misfit once for bookkeeping
        let (z, u, m) = (&st.z, &st.u, &st.m);
        let extra: Vec<Result<(f64, f64)>> = map_mut(models, settings.exec, |i, model| {
            let c = model.cost(&m[i])?;
            let pen = 0.5 * rho * metric.norm_sq(&sub(&m[i], &sub(z, &u[i])));
            Ok((c, pen))
        });
        start_sum = 0.0;
        misfit_sum = 0.0;
        for r in extra {
            let (c, pen) = r?;
            start_sum += (c + pen) / qf;
            misfit_sum += c;
        }
    }
    let lagrangian_start = start_sum - 0.5 * rho * u_sq / qf + reg.value(&st.z);

    let n = st.z.len();
    let mut m_bar = vec![0.0; n];
    let mut u_bar = vec![0.0; n];
    for i in 0..q {
        axpy(&mut m_bar, 1.0 / qf, &st.m[i]);
        axpy(&mut u_bar, 1.0 / qf, &st.u[i]);
    }
    let zu = z_update(reg, &m_bar, &u_bar, rho, metric, &settings.z_solver)?;
    let z_prev = std::mem::replace(&mut st.z, zu.z);

    let mut penalty_end = 0.0;
    for i in 0..q {
        let d: Vec<f64> = (0..n).map(|j| st.m[i][j] - st.z[j] + st.u[i][j]).collect();
        penalty_end += 0.5 * rho * metric.norm_sq(&d);
    }
    let reg_z = reg.value(&st.z);
    let lagrangian_end = (misfit_sum + penalty_end - 0.5 * rho * u_sq) / qf + reg_z;

    for i in 0..q {
        for j in 0..n {
            st.u[i][j] += st.m[i][j] - st.z[j];
        }
    }
    let (r_norm, s_norm) = residuals(&st.m, &st.z, &z_prev, rho, metric);
    if settings.adaptive_rho {
        let (new_rho, factor) = update_rho(rho, r_norm, s_norm, settings.mu, settings.tau);
        if factor != 1.0 {
            st.u.iter_mut().flatten().for_each(|v| *v *= factor);
        }
        st.rho = new_rho;
    }
    st.converged = check_convergence(
        r_norm,
        s_norm,
        st.m_norm(metric),
        metric.norm(&st.z),
        settings.eps_abs,
        settings.eps_rel,
    );
    st.k += 1;
    let counters = models.iter().map(|m| m.counters()).sum::<SolveCounters>() - st.counters_start;
    let record = AdmmRecord {
        k: st.k,
        rho,
        r_norm,
        s_norm,
        cost: misfit_sum / qf + reg_z,
        rel_error: monitor.map(|f| f(&st.z)),
        counters,
        lagrangian_start,
        lagrangian_end,
        failed_subproblems: failed,
        z_converged: zu.converged,
    };
    log::info!(
        "admm k {} rho {:.3e} r {:.3e} s {:.3e} cost {:.6e}",
        record.k,
        record.rho,
        record.r_norm,
        record.s_norm,
        record.cost
    );
    st.history.push(record);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_branches() {
        assert_eq!(update_rho(1.0, 10.0, 1.0, 2.0, 3.0), (3.0, 1.0 / 3.0));
        assert_eq!(update_rho(1.0, 1.0, 10.0, 2.0, 3.0), (1.0 / 3.0, 3.0));
        assert_eq!(update_rho(1.0, 1.0, 1.0, 2.0, 3.0), (1.0, 1.0));
    }

    #[test]
    fn convergence_truth_table() {
        assert!(check_convergence(0.0, 0.0, 1.0, 1.0, 1e-5, 1e-2));
        let thr = 1e-5 + 1e-2 * 3.0;
        assert!(check_convergence(thr, 0.0, 3.0, 1.0, 1e-5, 1e-2));
        assert!(!check_convergence(thr * (1.0 + 1e-12), 0.0, 3.0, 1.0, 1e-5, 1e-2));
        assert!(!check_convergence(0.0, 1.0, 3.0, 1.0, 1e-5, 1e-2));
    }
}
