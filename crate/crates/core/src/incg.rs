//! Inexact Newton-CG with Eisenstat–Walker forcing and Armijo backtracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{axpy, dot, Metric};
use crate::model::{HessianMode, SolveCounters};

/// Smooth objective with second-order information.
pub trait Objective {
    fn cost(&mut self, m: &[f64]) -> Result<f64>;

    /// Cost and assembled gradient; also sets the linearization point.
    fn gradient(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Hessian at the last gradient point applied to `dir`.
    fn hessian_action(&mut self, dir: &[f64], mode: HessianMode) -> Result<Vec<f64>>;

    /// Applies the inverse of the CG preconditioner.
    fn precondition(&self, r: &[f64]) -> Result<Vec<f64>>;

    fn counters(&self) -> SolveCounters {
        SolveCounters::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncgSettings {
    pub max_iter: usize,
    pub grad_abs_tol: f64,
    pub grad_rel_tol: f64,
    pub max_cg_iter: usize,
    pub c_armijo: f64,
    pub max_backtrack: usize,
    pub hessian_mode: HessianMode,
    /// Upper bound on the CG forcing term.
    pub max_forcing: f64,
    /// Spend one extra Hessian action per iteration to record ‖Hm̂ + g‖.
    pub verify_cg: bool,
}

impl Default for IncgSettings {
    fn default() -> Self {
        Self {
            max_iter: 20,
            grad_abs_tol: 1e-12,
            grad_rel_tol: 1e-6,
            max_cg_iter: 100,
            c_armijo: 1e-4,
            max_backtrack: 10,
            hessian_mode: HessianMode::Full,
            max_forcing: 0.5,
            verify_cg: false,
        }
    }
}

impl IncgSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_abs_tol > 0.0 && self.grad_rel_tol > 0.0) {
            return Err(Error::InvalidSettings("INCG tolerances must be positive".into()));
        }
        if !(self.c_armijo > 0.0 && self.c_armijo < 0.5) {
            return Err(Error::InvalidSettings("c_armijo must lie in (0, 1/2)".into()));
        }
        if !(self.max_forcing > 0.0 && self.max_forcing < 1.0) {
            return Err(Error::InvalidSettings("max_forcing must lie in (0, 1)".into()));
        }
        if self.max_backtrack == 0 || self.max_cg_iter == 0 {
            return Err(Error::InvalidSettings("max_backtrack and max_cg_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    IterationLimit,
    LineSearchFailed,
}

/// How a CG solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgExit {
    Converged,
    NegativeCurvature,
    IterationLimit,
}

/// Post-hoc check of the CG residual, recorded when `verify_cg` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgCertificate {
    pub forcing: f64,
    pub grad_norm: f64,
    pub residual_norm: f64,
    pub exit: CgExit,
}

#[derive(Debug, Clone)]
pub struct IncgResult {
    pub m: Vec<f64>,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    /// Cost at the start and after every accepted step.
    pub cost_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub cg_history: Vec<usize>,
    pub alpha_history: Vec<f64>,
    /// gᵀm̂ for each accepted step.
    pub descent_history: Vec<f64>,
    pub certificates: Vec<CgCertificate>,
    /// Solves spent up to each entry of `cost_history`.
    pub counter_history: Vec<SolveCounters>,
    pub counters: SolveCounters,
}

/// η = min(½, √(‖g‖/‖g₀‖)).
pub fn eisenstat_walker_forcing(grad_norm: f64, grad_norm0: f64) -> f64 {
    (grad_norm / grad_norm0).sqrt().min(0.5)
}

fn forcing(grad_norm: f64, grad_norm0: f64, cap: f64) -> f64 {
    eisenstat_walker_forcing(grad_norm, grad_norm0).min(cap)
}

struct CgOutcome {
    step: Vec<f64>,
    iterations: usize,
    exit: CgExit,
}

/// Preconditioned CG on H m̂ = −g, truncated at negative curvature.
fn truncated_cg<O: Objective>(
    obj: &mut O,
    g: &[f64],
    grad_norm: f64,
    eta: f64,
    settings: &IncgSettings,
    metric: &Metric,
) -> Result<CgOutcome> {
    let n = g.len();
    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut z = obj.precondition(&r)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let tol = eta * grad_norm;
    for it in 0..settings.max_cg_iter {
        let hp = obj.hessian_action(&p, settings.hessian_mode)?;
        let curv = dot(&p, &hp);
        if !(curv > 0.0) {
            if it == 0 {
                x = z;
            }
            return Ok(CgOutcome {
                step: x,
                iterations: it + 1,
                exit: CgExit::NegativeCurvature,
            });
        }
        let alpha = rz / curv;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &hp);
        if metric.dual_norm(&r)? <= tol {
            return Ok(CgOutcome {
                step: x,
                iterations: it + 1,
                exit: CgExit::Converged,
            });
        }
        z = obj.precondition(&r)?;
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Ok(CgOutcome {
        step: x,
        iterations: settings.max_cg_iter,
        exit: CgExit::IterationLimit,
    })
}

/// Minimizes `obj` from `m0`; gradient norms are dual norms in `metric`.
pub fn solve<O: Objective>(obj: &mut O, m0: &[f64], settings: &IncgSettings, metric: &Metric) -> Result<IncgResult> {
    settings.validate()?;
    metric.check_len(m0)?;
    let start = obj.counters();
    let mut m = m0.to_vec();
    let (mut cost, mut g) = obj.gradient(&m)?;
    let mut gnorm = metric.dual_norm(&g)?;
    let g0 = gnorm;
    let tol = settings.grad_abs_tol + settings.grad_rel_tol * g0;
    let mut res = IncgResult {
        m: Vec::new(),
        converged: false,
        termination: Termination::IterationLimit,
        iterations: 0,
        final_cost: cost,
        final_grad_norm: gnorm,
        cost_history: vec![cost],
        grad_norm_history: vec![gnorm],
        cg_history: Vec::new(),
        alpha_history: Vec::new(),
        descent_history: Vec::new(),
        certificates: Vec::new(),
        counter_history: vec![obj.counters() - start],
        counters: SolveCounters::default(),
    };

    loop {
        if gnorm <= tol {
            res.converged = true;
            res.termination = Termination::GradientTolerance;
            break;
        }
        if res.iterations >= settings.max_iter {
            break;
        }
        let eta = forcing(gnorm, g0, settings.max_forcing);
        let cg = truncated_cg(obj, &g, gnorm, eta, settings, metric)?;
        res.cg_history.push(cg.iterations);
        if settings.verify_cg {
            let mut r = obj.hessian_action(&cg.step, settings.hessian_mode)?;
            axpy(&mut r, 1.0, &g);
            res.certificates.push(CgCertificate {
                forcing: eta,
                grad_norm: gnorm,
                residual_norm: metric.dual_norm(&r)?,
                exit: cg.exit,
            });
        }

        let mut slope = dot(&g, &cg.step);
        let mut step = cg.step;
        if !(slope < 0.0) {
            // the preconditioned residual is always a descent direction
            step = obj.precondition(&g.iter().map(|v| -v).collect::<Vec<_>>())?;
            slope = dot(&g, &step);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..settings.max_backtrack {
            let trial: Vec<f64> = m.iter().zip(&step).map(|(a, d)| a + alpha * d).collect();
            match obj.cost(&trial) {
                Ok(c) if c < cost + alpha * settings.c_armijo * slope => {
                    accepted = Some((trial, c));
                    break;
                }
                Ok(_) => {}
                Err(e) if e.is_solver_failure() || matches!(e, Error::NonPositiveCoefficient { .. }) => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
        }
        let Some((trial, _)) = accepted else {
            res.termination = Termination::LineSearchFailed;
            log::warn!("INCG line search failed after {} backtracks", settings.max_backtrack);
            break;
        };
        m = trial;
        res.iterations += 1;
        res.alpha_history.push(alpha);
        res.descent_history.push(slope);
        let (c, gn) = obj.gradient(&m)?;
        cost = c;
        g = gn;
        gnorm = metric.dual_norm(&g)?;
        res.cost_history.push(cost);
        res.grad_norm_history.push(gnorm);
        res.counter_history.push(obj.counters() - start);
        log::debug!(
            "incg it {} cost {:.6e} |g| {:.3e} cg {} alpha {}",
            res.iterations,
            cost,
            gnorm,
            res.cg_history.last().unwrap(),
            alpha
        );
    }
    res.m = m;
    res.final_cost = cost;
    res.final_grad_norm = gnorm;
    res.counters = obj.counters() - start;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_unit_disc_mesh, FunctionSpace, NormKind, SparseOperator};
    use std::sync::Arc;

    /// ½ mᵀAm − bᵀm with A = K + M.
    struct Quadratic {
        a: SparseOperator,
        b: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn cost(&mut self, m: &[f64]) -> Result<f64> {
            Ok(0.5 * self.a.bilinear(m, m) - dot(&self.b, m))
        }
        fn gradient(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
            let mut g = self.a.apply(m);
            axpy(&mut g, -1.0, &self.b);
            Ok((self.cost(m)?, g))
        }
        fn hessian_action(&mut self, dir: &[f64], _: HessianMode) -> Result<Vec<f64>> {
            Ok(self.a.apply(dir))
        }
        fn precondition(&self, r: &[f64]) -> Result<Vec<f64>> {
            Ok(r.to_vec())
        }
    }

    #[test]
    fn forcing_values() {
        assert!((eisenstat_walker_forcing(0.01, 1.0) - 0.1).abs() < 1e-15);
        assert_eq!(eisenstat_walker_forcing(1.0, 1.0), 0.5);
        assert!((eisenstat_walker_forcing(1e-8, 1.0) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn quadratic_converges_in_one_newton_step() {
        let space = Arc::new(FunctionSpace::new(Arc::new(build_unit_disc_mesh(2).unwrap())).unwrap());
        let metric = Metric::new(space.clone(), 1, NormKind::L2).unwrap();
        let a = space.metric_operator(NormKind::H1);
        let b: Vec<f64> = (0..space.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut obj = Quadratic { a, b };
        let settings = IncgSettings {
            grad_rel_tol: 1e-9,
            max_cg_iter: 500,
            ..Default::default()
        };
        let res = solve(&mut obj, &vec![0.0; space.dim()], &settings, &metric).unwrap();
        assert!(res.converged);
        for w in res.cost_history.windows(2) {
            assert!(w[1] < w[0]);
        }

        let exact = IncgSettings {
            max_forcing: 1e-12,
            ..settings
        };
        let res = solve(&mut obj, &vec![0.0; space.dim()], &exact, &metric).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.alpha_history, vec![1.0]);
    }

    #[test]
    fn invalid_settings_rejected() {
        let s = IncgSettings {
            c_armijo: 0.7,
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }
}
