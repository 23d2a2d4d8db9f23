use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use admm_pde::experiments::config::{load_config, parse_config};
use admm_pde::experiments::study::run_study;
use admm_pde::experiments::{build_mesh, eit_setup, qpact_setup, ExperimentConfig, Problem, StudyKind};
use admm_pde::fem::{write_atomic, write_mesh, Field};
use admm_pde::qpact::QpactParams;
use admm_pde::selfcheck::run_checks;
use admm_pde::{Error, Result};

#[derive(Parser)]
#[command(name = "admm-pde", version, about = "Consensus ADMM inversions for EIT and qPACT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured mesh.
    Mesh(Common),
    /// Write the phantom and noisy synthetic data.
    Synth(Common),
    /// Run one ADMM or monolithic reconstruction.
    Invert(Common),
    /// Run the configured study.
    Study(Common),
    /// Run finite-difference and oracle self-tests.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted key override, e.g. `admm.rho0=1.0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, toml::Value)> {
        let mut sets = self.sets.clone();
        if let Some(seed) = self.seed {
            sets.push(format!("seed={seed}"));
        }
        match &self.config {
            Some(path) => load_config(path, &sets),
            None => parse_config("", Path::new("<defaults>"), &sets),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_solver_failure() {
        2
    } else {
        1
    }
}

fn cmd_mesh(c: &Common) -> Result<()> {
    let (cfg, _) = c.load()?;
    let mesh = build_mesh(&cfg)?;
    let path = c.out.join("mesh.mesh");
    write_mesh(&mesh, &path)?;
    println!("wrote {} ({} vertices)", path.display(), mesh.num_vertices());
    Ok(())
}

fn write_field(mesh: &admm_pde::fem::Mesh, path: &Path, values: Vec<f64>) -> Result<()> {
    Field::new(mesh, values)?.write(path)
}

fn cmd_synth(c: &Common) -> Result<()> {
    let (cfg, tree) = c.load()?;
    let snapshot = toml::to_string(&tree).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&c.out.join("config.toml"), snapshot.as_bytes())?;
    let out = &c.out;
    match cfg.problem {
        Problem::Eit => {
            let setup = eit_setup(&cfg)?;
            let mesh = setup.space.mesh();
            write_mesh(mesh, &out.join("mesh.mesh"))?;
            write_field(mesh, &out.join("m_true.field"), setup.truth.clone())?;
            for (i, m) in setup.models.iter().enumerate() {
                write_field(mesh, &out.join(format!("data_{i}.field")), m.data().to_vec())?;
            }
        }
        Problem::Qpact => {
            let setup = qpact_setup(&cfg)?;
            let mesh = setup.space.mesh();
            write_mesh(mesh, &out.join("mesh.mesh"))?;
            let QpactParams { s, c_thb, mus } = setup.truth.clone();
            write_field(mesh, &out.join("s_true.field"), s)?;
            write_field(mesh, &out.join("c_thb_true.field"), c_thb)?;
            write_field(mesh, &out.join("mus_true.field"), mus)?;
            for (i, m) in setup.models.iter().enumerate() {
                write_field(mesh, &out.join(format!("data_{i}.field")), m.inner().data().to_vec())?;
            }
        }
    }
    println!("wrote synthetic data for {} models to {}", cfg.q, out.display());
    Ok(())
}

fn cmd_study(c: &Common, single: bool) -> Result<()> {
    let (mut cfg, mut tree) = c.load()?;
    if single {
        cfg.study.kind = StudyKind::Single;
        if let Some(t) = tree.get_mut("study").and_then(|v| v.as_table_mut()) {
            t.insert("kind".into(), toml::Value::String("single".into()));
        }
    }
    let runs = run_study(&cfg, &tree, &c.out)?;
    let mut failed = 0;
    for (name, run) in &runs {
        match run {
            Ok(r) => println!(
                "{name}: iterations {} relative error {:.4} incremental solves {}",
                r.iterations, r.relative_error, r.counters.incremental
            ),
            Err(e) => {
                println!("{name}: failed: {e}");
                failed += 1;
            }
        }
    }
    println!("report written to {}", c.out.display());
    if failed > 0 {
        return Err(Error::RunsFailed(failed));
    }
    Ok(())
}

fn cmd_check(seed: u64) -> ExitCode {
    let results = run_checks(seed);
    let mut ok = true;
    for r in &results {
        println!("{} {} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Mesh(c) => cmd_mesh(c),
        Command::Synth(c) => cmd_synth(c),
        Command::Invert(c) => cmd_study(c, true),
        Command::Study(c) => cmd_study(c, false),
        Command::Check { seed } => return cmd_check(*seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
