use std::fmt::Write as _;
use std::path::Path;

use super::config::{ExperimentConfig, Method, StudyKind};
use super::{build_mesh, run_inversion, HistoryRow, RunReport};
use crate::error::{Error, Result};
use crate::fem::{write_atomic, Field, NormKind};
use crate::model::SolveCounters;

/// Expands a study into labelled single-run configurations.
pub fn study_runs(cfg: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let st = &cfg.study;
    let with = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        c
    };
    match st.kind {
        StudyKind::Single => vec![(super::label_for(cfg), cfg.clone())],
        StudyKind::Norm => vec![
            (
                "l2".into(),
                with(&|c| {
                    c.method = Method::Admm;
                    c.admm.consensus_norm = NormKind::L2;
                    c.admm.rho0 = st.l2_rho0;
                }),
            ),
            (
                "h1".into(),
                with(&|c| {
                    c.method = Method::Admm;
                    c.admm.consensus_norm = NormKind::H1;
                    c.admm.rho0 = st.h1_rho0;
                }),
            ),
        ],
        StudyKind::Inexact => vec![
            (
                "inexact".into(),
                with(&|c| {
                    c.method = Method::Admm;
                    c.admm.subproblem.max_iter = st.inexact_iters;
                }),
            ),
            (
                "exact".into(),
                with(&|c| {
                    c.method = Method::Admm;
                    c.admm.subproblem.max_iter = st.exact_iters;
                }),
            ),
        ],
        StudyKind::Refinement => st
            .levels
            .iter()
            .flat_map(|&level| {
                [Method::Admm, Method::Monolithic].map(|method| {
                    let name = format!("{}_level{level}", method_name(method));
                    let c = with(&|c| {
                        c.method = method;
                        c.mesh.level = level;
                        c.mesh.square_n = None;
                        c.mesh.file = None;
                    });
                    (name, c)
                })
            })
            .collect(),
        StudyKind::Models => st
            .qs
            .iter()
            .flat_map(|&q| {
                [Method::Admm, Method::Monolithic].map(|method| {
                    let name = format!("{}_q{q}", method_name(method));
                    let c = with(&|c| {
                        c.method = method;
                        c.q = q;
                        c.eit.source_angles.clear();
                    });
                    (name, c)
                })
            })
            .collect(),
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Admm => "admm",
        Method::Monolithic => "monolithic",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

/// Convergence history; no timings, so reruns are byte-identical.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from(
        "k,rho,r_norm,s_norm,cost,grad_norm,rel_error,forward_solves,adjoint_solves,incremental_solves\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.12e},{},{},{},{},{}",
            r.k,
            opt(r.rho),
            opt(r.r_norm),
            opt(r.s_norm),
            r.cost,
            opt(r.grad_norm),
            opt(r.rel_error),
            r.counters.forward,
            r.counters.adjoint,
            r.counters.incremental
        );
    }
    s
}

pub const SUMMARY_HEADER: &str = "run,method,q,dofs,iterations,converged,seconds,relative_error,state_misfit,forward_solves,adjoint_solves,incremental_solves,status\n";

/// One row per run, columns as in the comparison tables. `state_misfit` is
/// Σᵢ‖fᵢ(m) − dᵢ‖² at the final iterate.
pub fn summary_csv(runs: &[(String, std::result::Result<RunReport, String>)]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    for (name, run) in runs {
        match run {
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "{name},{},{},{},{},{},{:.3},{:.6e},{:.6e},{},{},{},ok",
                    method_name(r.method),
                    r.q,
                    r.dofs,
                    r.iterations,
                    r.converged,
                    r.seconds,
                    r.relative_error,
                    r.state_misfit,
                    r.counters.forward,
                    r.counters.adjoint,
                    r.counters.incremental
                );
            }
            Err(e) => {
                let msg = e.replace([',', '\n'], ";");
                let _ = writeln!(s, "{name},,,,,,,,,,,,failed: {msg}");
            }
        }
    }
    s
}

fn counters_csv(per_model: &[SolveCounters]) -> String {
    let mut s = String::from("model,forward_solves,adjoint_solves,incremental_solves\n");
    for (i, c) in per_model.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{}", c.forward, c.adjoint, c.incremental);
    }
    let t: SolveCounters = per_model.iter().copied().sum();
    let _ = writeln!(s, "total,{},{},{}", t.forward, t.adjoint, t.incremental);
    s
}

fn errors_csv(errors: &[(String, f64)]) -> String {
    let mut s = String::from("field,relative_error\n");
    for (name, e) in errors {
        let _ = writeln!(s, "{name},{e:.12e}");
    }
    s
}

/// Writes one run's history, counters, errors and fields under `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, report: &RunReport) -> Result<()> {
    write_atomic(&dir.join("history.csv"), history_csv(&report.history).as_bytes())?;
    write_atomic(&dir.join("counters.csv"), counters_csv(&report.per_model_counters).as_bytes())?;
    write_atomic(&dir.join("errors.csv"), errors_csv(&report.field_errors).as_bytes())?;
    let mesh = build_mesh(cfg)?;
    for (name, values) in &report.fields {
        let field = Field::new(&mesh, values.clone())?;
        field.write(&dir.join("fields").join(format!("{name}.field")))?;
    }
    Ok(())
}

/// Runs every configuration of the study and writes the report directory:
/// `config.toml` (snapshot including overrides), one subdirectory per run and
/// `summary.csv`. A failed run is recorded in the summary and the others
/// still execute.
pub fn run_study(cfg: &ExperimentConfig, snapshot: &toml::Value, out: &Path) -> Result<Vec<(String, std::result::Result<RunReport, String>)>> {
    cfg.validate()?;
    let text = toml::to_string(snapshot).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&out.join("config.toml"), text.as_bytes())?;
    let mut runs = Vec::new();
    for (name, run_cfg) in study_runs(cfg) {
        log::info!("study run {name}");
        let outcome = match run_inversion(&run_cfg) {
            Ok(report) => {
                write_run(&out.join(&name), &run_cfg, &report)?;
                Ok(report)
            }
            Err(e) => {
                log::warn!("run {name} failed: {e}");
                Err(e.to_string())
            }
        };
        runs.push((name, outcome));
    }
    write_atomic(&out.join("summary.csv"), summary_csv(&runs).as_bytes())?;
    Ok(runs)
}
