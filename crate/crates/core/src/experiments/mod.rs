//! Synthetic studies: phantoms, data, single inversions and study reports.

pub mod config;
pub mod phantom;
pub mod study;
pub mod synth;

use std::sync::Arc;
use std::time::Instant;

pub use config::{ExperimentConfig, Method, Problem, StudyKind};
pub use phantom::{phantom, Ellipse, EllipsePhantomSpec};
pub use synth::{relative_error, state_misfit, synthesize_eit_data, synthesize_qpact_data};

use crate::admm::{self, AdmmState};
use crate::eit::{equispaced_sources, EitModel, SourceSpec};
use crate::error::{Error, Result};
use crate::fem::{build_unit_disc_mesh, build_unit_square_mesh, read_mesh, FunctionSpace, Mesh};
use crate::incg::IncgResult;
use crate::metric::Metric;
use crate::model::{InversionModel, Reparameterized, SolveCounters};
use crate::monolithic::monolithic_solve;
use crate::parallel::with_threads;
use crate::qpact::{QpactModel, QpactParams};
use crate::regularization::{QpactRegularizer, Regularizer, TransformedRegularizer, TvRegularizer, TvSettings};
use crate::transform::{BlockTransform, TransformKind};

pub fn build_mesh(cfg: &ExperimentConfig) -> Result<Mesh> {
    if let Some(f) = &cfg.mesh.file {
        return read_mesh(f);
    }
    match cfg.mesh.square_n {
        Some(n) => build_unit_square_mesh(n),
        None => build_unit_disc_mesh(cfg.mesh.level),
    }
}

/// EIT models with synthetic data, the truth and the TV regularizer.
pub struct EitSetup {
    pub space: Arc<FunctionSpace>,
    pub models: Vec<EitModel>,
    pub truth: Vec<f64>,
    pub reg: TvRegularizer,
    pub m0: Vec<f64>,
}

pub fn eit_sources(cfg: &ExperimentConfig, mesh: &Mesh) -> Result<Vec<SourceSpec>> {
    let ground = mesh
        .boundary_vertex_nearest_angle(cfg.eit.ground_angle)
        .ok_or_else(|| Error::Config("mesh has no boundary vertices".into()))?;
    let mut sources = if cfg.eit.source_angles.is_empty() {
        equispaced_sources(cfg.q, ground)
    } else {
        cfg.eit
            .source_angles
            .iter()
            .map(|&t| SourceSpec::at_angle(t, ground))
            .collect()
    };
    for s in &mut sources {
        s.gamma = cfg.eit.gamma;
        s.beta = cfg.eit.beta;
    }
    Ok(sources)
}

pub fn eit_setup(cfg: &ExperimentConfig) -> Result<EitSetup> {
    let mesh = build_mesh(cfg)?;
    let sources = eit_sources(cfg, &mesh)?;
    let truth = phantom(&mesh, &cfg.eit.phantom);
    let space = Arc::new(FunctionSpace::new(Arc::new(mesh))?);
    let n = space.dim();
    let mut models = sources
        .into_iter()
        .map(|s| EitModel::new(space.clone(), s, vec![0.0; n]))
        .collect::<Result<Vec<_>>>()?;
    synthesize_eit_data(&mut models, &truth, cfg.noise, cfg.seed)?;
    let r = &cfg.reg;
    let reg = TvRegularizer::new(
        space.clone(),
        TvSettings::with_constant_reference(r.alpha_tv, r.alpha_tk, r.eps, r.m_ref, n),
    )?;
    Ok(EitSetup {
        m0: vec![cfg.m0; n],
        space,
        models,
        truth,
        reg,
    })
}

/// Optical parameters are inverted for through s = logistic(x), c = eˣ, μ_s′ = eˣ.
pub fn qpact_transform(n: usize) -> BlockTransform {
    BlockTransform::new(vec![TransformKind::Logit, TransformKind::Log, TransformKind::Log], n)
}

/// qPACT models in transformed coordinates with synthetic data.
pub struct QpactSetup {
    pub space: Arc<FunctionSpace>,
    pub models: Vec<Reparameterized<QpactModel>>,
    pub truth: QpactParams,
    pub reg: TransformedRegularizer<QpactRegularizer>,
    pub transform: BlockTransform,
    /// Initial guess in transformed coordinates.
    pub m0: Vec<f64>,
    pub clamped: Vec<usize>,
}

pub fn qpact_truth(cfg: &ExperimentConfig, mesh: &Mesh) -> QpactParams {
    QpactParams {
        s: phantom(mesh, &cfg.qpact.s),
        c_thb: phantom(mesh, &cfg.qpact.c_thb),
        mus: phantom(mesh, &cfg.qpact.mus),
    }
}

pub fn qpact_setup(cfg: &ExperimentConfig) -> Result<QpactSetup> {
    let mesh = build_mesh(cfg)?;
    let truth = qpact_truth(cfg, &mesh);
    let space = Arc::new(FunctionSpace::new(Arc::new(mesh))?);
    let n = space.dim();
    let illumination = vec![cfg.qpact.illumination; n];
    let mut models = cfg
        .qpact
        .table
        .wavelengths
        .iter()
        .map(|&w| QpactModel::new(space.clone(), &cfg.qpact.table, w, &illumination, vec![1.0; n]))
        .collect::<Result<Vec<_>>>()?;
    let clamped = synthesize_qpact_data(&mut models, &truth, cfg.noise, cfg.seed)?;
    let transform = qpact_transform(n);
    let reg = TransformedRegularizer::new(QpactRegularizer::new(space.clone(), cfg.qpact.reg)?, transform.clone());
    let [s0, c0, mu0] = cfg.qpact.initial;
    let m0 = transform.inverse(&[vec![s0; n], vec![c0; n], vec![mu0; n]].concat());
    let models = models
        .into_iter()
        .map(|m| Reparameterized::new(m, transform.clone()))
        .collect();
    Ok(QpactSetup {
        space,
        models,
        truth,
        reg,
        transform,
        m0,
        clamped,
    })
}

/// One row of a convergence history. ADMM rows fill the residual columns,
/// monolithic rows the gradient norm.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub k: usize,
    pub rho: Option<f64>,
    pub r_norm: Option<f64>,
    pub s_norm: Option<f64>,
    pub cost: f64,
    pub grad_norm: Option<f64>,
    pub rel_error: Option<f64>,
    pub counters: SolveCounters,
}

/// Outcome of one inversion.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub label: String,
    pub problem: Problem,
    pub method: Method,
    pub q: usize,
    pub dofs: usize,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
    /// For qPACT, the larger of the errors on s and c_thb.
    pub relative_error: f64,
    pub state_misfit: f64,
    /// Total solve counts, summed over models.
    pub counters: SolveCounters,
    pub per_model_counters: Vec<SolveCounters>,
    pub history: Vec<HistoryRow>,
    /// Named nodal fields of the reconstruction and the truth.
    pub fields: Vec<(String, Vec<f64>)>,
    /// Per-field relative errors.
    pub field_errors: Vec<(String, f64)>,
    pub lagrangian: Vec<(f64, f64)>,
    pub failure: Option<String>,
}

fn admm_history(st: &AdmmState) -> Vec<HistoryRow> {
    st.history
        .iter()
        .map(|r| HistoryRow {
            k: r.k,
            rho: Some(r.rho),
            r_norm: Some(r.r_norm),
            s_norm: Some(r.s_norm),
            cost: r.cost,
            grad_norm: None,
            rel_error: r.rel_error,
            counters: r.counters,
        })
        .collect()
}

fn incg_history(res: &IncgResult) -> Vec<HistoryRow> {
    (0..res.cost_history.len())
        .map(|k| HistoryRow {
            k,
            rho: None,
            r_norm: None,
            s_norm: None,
            cost: res.cost_history[k],
            grad_norm: res.grad_norm_history.get(k).copied(),
            rel_error: None,
            counters: res.counter_history.get(k).copied().unwrap_or_default(),
        })
        .collect()
}

struct Solved {
    m: Vec<f64>,
    iterations: usize,
    converged: bool,
    history: Vec<HistoryRow>,
    lagrangian: Vec<(f64, f64)>,
}

fn solve_with<M: InversionModel>(
    cfg: &ExperimentConfig,
    models: &mut [M],
    reg: &dyn Regularizer,
    metric: &Metric,
    m0: &[f64],
    monitor: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Result<Solved> {
    match cfg.method {
        Method::Admm => {
            let mut settings = cfg.admm.clone();
            settings.exec = cfg.exec;
            let st = admm::run(models, reg, &settings, metric, m0, Some(monitor))?;
            Ok(Solved {
                iterations: st.k,
                converged: st.converged,
                history: admm_history(&st),
                lagrangian: st.history.iter().map(|r| (r.lagrangian_start, r.lagrangian_end)).collect(),
                m: st.z,
            })
        }
        Method::Monolithic => {
            let res = monolithic_solve(models, reg, &cfg.incg, metric, m0, cfg.exec)?;
            let mut history = incg_history(&res);
            if let Some(last) = history.last_mut() {
                last.rel_error = Some(monitor(&res.m));
            }
            Ok(Solved {
                iterations: res.iterations,
                converged: res.converged,
                history,
                lagrangian: Vec::new(),
                m: res.m,
            })
        }
    }
}

pub(crate) fn label_for(cfg: &ExperimentConfig) -> String {
    let method = match cfg.method {
        Method::Admm => format!("admm_{}", cfg.admm.consensus_norm),
        Method::Monolithic => "monolithic".to_string(),
    };
    format!("{method}_q{}", cfg.q)
}

/// Builds the problem from `cfg`, synthesizes data and runs one inversion.
///
/// Solver failures are returned as errors; callers that want a report
/// regardless go through the study runner.
pub fn run_inversion(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    with_threads(cfg.worker_threads(), || match cfg.problem {
        Problem::Eit => run_eit(cfg),
        Problem::Qpact => run_qpact(cfg),
    })
}

fn run_eit(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut setup = eit_setup(cfg)?;
    let metric = Metric::new(setup.space.clone(), 1, cfg.admm.consensus_norm)?;
    let start: Vec<SolveCounters> = setup.models.iter().map(|m| m.counters()).collect();
    let space = setup.space.clone();
    let truth = setup.truth.clone();
    let monitor = move |m: &[f64]| relative_error(&space, m, &truth);
    let clock = Instant::now();
    let solved = solve_with(cfg, &mut setup.models, &setup.reg, &metric, &setup.m0, &monitor)?;
    let seconds = clock.elapsed().as_secs_f64();
    let per_model: Vec<SolveCounters> = setup
        .models
        .iter()
        .zip(&start)
        .map(|(m, s)| m.counters() - *s)
        .collect();
    let misfit = state_misfit(&mut setup.models, &solved.m)?;
    let err = relative_error(&setup.space, &solved.m, &setup.truth);
    Ok(RunReport {
        label: label_for(cfg),
        problem: Problem::Eit,
        method: cfg.method,
        q: cfg.q,
        dofs: setup.space.dim(),
        iterations: solved.iterations,
        converged: solved.converged,
        seconds,
        relative_error: err,
        state_misfit: misfit,
        counters: per_model.iter().copied().sum(),
        per_model_counters: per_model,
        history: solved.history,
        fields: vec![("m".into(), solved.m), ("m_true".into(), setup.truth)],
        field_errors: vec![("m".into(), err)],
        lagrangian: solved.lagrangian,
        failure: None,
    })
}

/// Relative errors of s, c_thb and μ_s′ for a transformed iterate.
pub fn qpact_errors(space: &FunctionSpace, transform: &BlockTransform, x: &[f64], truth: &QpactParams) -> [f64; 3] {
    let p = QpactParams::from_stacked(&transform.forward(x));
    [
        relative_error(space, &p.s, &truth.s),
        relative_error(space, &p.c_thb, &truth.c_thb),
        relative_error(space, &p.mus, &truth.mus),
    ]
}

fn run_qpact(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut setup = qpact_setup(cfg)?;
    let metric = Metric::new(setup.space.clone(), 3, cfg.admm.consensus_norm)?;
    let start: Vec<SolveCounters> = setup.models.iter().map(|m| m.counters()).collect();
    let (space, transform, truth) = (setup.space.clone(), setup.transform.clone(), setup.truth.clone());
    let monitor = move |x: &[f64]| {
        let e = qpact_errors(&space, &transform, x, &truth);
        e[0].max(e[1])
    };
    let clock = Instant::now();
    let solved = solve_with(cfg, &mut setup.models, &setup.reg, &metric, &setup.m0, &monitor)?;
    let seconds = clock.elapsed().as_secs_f64();
    let per_model: Vec<SolveCounters> = setup
        .models
        .iter()
        .zip(&start)
        .map(|(m, s)| m.counters() - *s)
        .collect();
    let misfit = state_misfit(&mut setup.models, &solved.m)?;
    let errs = qpact_errors(&setup.space, &setup.transform, &solved.m, &setup.truth);
    let p = QpactParams::from_stacked(&setup.transform.forward(&solved.m));
    let t = setup.truth;
    Ok(RunReport {
        label: label_for(cfg),
        problem: Problem::Qpact,
        method: cfg.method,
        q: cfg.q,
        dofs: setup.space.dim(),
        iterations: solved.iterations,
        converged: solved.converged,
        seconds,
        relative_error: errs[0].max(errs[1]),
        state_misfit: misfit,
        counters: per_model.iter().copied().sum(),
        per_model_counters: per_model,
        history: solved.history,
        fields: vec![
            ("s".into(), p.s),
            ("c_thb".into(), p.c_thb),
            ("mus".into(), p.mus),
            ("s_true".into(), t.s),
            ("c_thb_true".into(), t.c_thb),
            ("mus_true".into(), t.mus),
        ],
        field_errors: vec![("s".into(), errs[0]), ("c_thb".into(), errs[1]), ("mus".into(), errs[2])],
        lagrangian: solved.lagrangian,
        failure: None,
    })
}
