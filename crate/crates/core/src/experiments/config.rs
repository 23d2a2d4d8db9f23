use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::phantom::{Ellipse, EllipsePhantomSpec};
use crate::admm::AdmmSettings;
use crate::error::{Error, Result};
use crate::incg::IncgSettings;
use crate::parallel::ExecMode;
use crate::qpact::ChromophoreTable;
use crate::regularization::QpactRegSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Eit,
    Qpact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Admm,
    Monolithic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    /// One run with the configuration as given.
    Single,
    /// ADMM with L² and with H¹ consensus.
    Norm,
    /// ADMM with inexact and with exact subproblems.
    Inexact,
    /// ADMM and monolithic over several mesh levels.
    Refinement,
    /// ADMM and monolithic over several model counts.
    Models,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Refinement level of the unit disc.
    pub level: usize,
    /// Cells per side of the unit square; used instead of the disc when set.
    pub square_n: Option<usize>,
    /// Mesh file; overrides both generators.
    pub file: Option<PathBuf>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            level: 4,
            square_n: None,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EitConfig {
    /// Current amplitude. Large enough that the data misfit, not the
    /// regularizer, drives the reconstruction.
    pub gamma: f64,
    pub beta: f64,
    /// Angle of the grounded boundary vertex.
    pub ground_angle: f64,
    /// Source angles; equispaced when empty.
    pub source_angles: Vec<f64>,
    pub phantom: EllipsePhantomSpec,
}

impl Default for EitConfig {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            beta: 10.0,
            ground_angle: 0.0,
            source_angles: Vec::new(),
            phantom: EllipsePhantomSpec::shepp_logan(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegConfig {
    pub alpha_tv: f64,
    pub alpha_tk: f64,
    pub eps: f64,
    pub m_ref: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            alpha_tv: 0.1,
            alpha_tk: 0.01,
            eps: 1e-4,
            m_ref: 0.0,
        }
    }
}

/// Ground truth for the optical parameters, one phantom per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpactConfig {
    pub table: ChromophoreTable,
    /// Constant boundary source φ₀.
    pub illumination: f64,
    pub s: EllipsePhantomSpec,
    pub c_thb: EllipsePhantomSpec,
    pub mus: EllipsePhantomSpec,
    /// Constant initial guess for (s, c_thb, μ_s′).
    pub initial: [f64; 3],
    pub reg: QpactRegSettings,
}

impl Default for QpactConfig {
    fn default() -> Self {
        let artery = Ellipse::disk([0.35, 0.6], 0.12, 0.0);
        let vein = Ellipse::disk([0.65, 0.35], 0.14, 0.0);
        let with = |a: f64, b: f64| vec![Ellipse { intensity: a, ..artery }, Ellipse { intensity: b, ..vein }];
        Self {
            table: ChromophoreTable::default(),
            illumination: 1.0,
            s: EllipsePhantomSpec {
                background: 0.8,
                ellipses: with(0.15, -0.1),
            },
            c_thb: EllipsePhantomSpec {
                background: 0.5,
                ellipses: with(1.0, 1.5),
            },
            mus: EllipsePhantomSpec {
                background: 10.0,
                ellipses: Vec::new(),
            },
            initial: [0.5, 0.5, 10.0],
            reg: QpactRegSettings {
                gamma_s: 1e-5,
                delta_s: 0.0,
                gamma_cthb: 1e-5,
                delta_cthb: 0.0,
                gamma_mus: 1e-4,
                delta_mus: 0.0,
                eps: 1e-6,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub kind: StudyKind,
    /// Subproblem iteration caps for the inexact study: (inexact, exact).
    pub inexact_iters: usize,
    pub exact_iters: usize,
    /// Mesh levels for the refinement study.
    pub levels: Vec<usize>,
    /// Model counts for the model-count study.
    pub qs: Vec<usize>,
    /// Initial penalties of the two norm-study runs.
    pub l2_rho0: f64,
    pub h1_rho0: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            kind: StudyKind::Single,
            inexact_iters: 3,
            exact_iters: 10,
            levels: vec![3, 4],
            qs: vec![2, 4, 8],
            l2_rho0: 1000.0,
            h1_rho0: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub method: Method,
    /// Number of forward models. For qPACT it must equal the number of wavelengths.
    pub q: usize,
    pub seed: u64,
    /// Noise standard deviation relative to the largest clean datum.
    pub noise: f64,
    pub exec: ExecMode,
    /// Worker threads; 0 means one per model.
    pub threads: usize,
    /// Constant initial guess for EIT.
    pub m0: f64,
    pub mesh: MeshConfig,
    pub eit: EitConfig,
    pub reg: RegConfig,
    pub qpact: QpactConfig,
    pub admm: AdmmSettings,
    pub incg: IncgSettings,
    pub study: StudyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: Problem::Eit,
            method: Method::Admm,
            q: 8,
            seed: 0,
            noise: 0.01,
            exec: ExecMode::Parallel,
            threads: 0,
            m0: 0.0,
            mesh: MeshConfig::default(),
            eit: EitConfig::default(),
            reg: RegConfig::default(),
            qpact: QpactConfig::default(),
            admm: AdmmSettings::default(),
            incg: IncgSettings {
                max_iter: 100,
                ..IncgSettings::default()
            },
            study: StudyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for the three-wavelength optical problem on the unit square.
    pub fn qpact_default() -> Self {
        let mut cfg = Self {
            problem: Problem::Qpact,
            q: 3,
            mesh: MeshConfig {
                level: 0,
                square_n: Some(27),
                file: None,
            },
            ..Self::default()
        };
        cfg.admm.mu = 4.0;
        cfg.admm.tau = 2.0;
        cfg.admm.rho0 = 1e-3;
        cfg.admm.eps_abs = 1e-4;
        cfg.admm.eps_rel = 5e-4;
        cfg.admm.max_global_iter = 200;
        cfg.admm.consensus_norm = crate::fem::NormKind::L2;
        cfg.admm.subproblem.max_iter = 50;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise must be nonnegative".into()));
        }
        if let Some(f) = &self.mesh.file {
            if !f.exists() {
                return Err(Error::Config(format!("mesh file {} does not exist", f.display())));
            }
        }
        if self.problem == Problem::Qpact && self.q != self.qpact.table.wavelengths.len() {
            return Err(Error::Config(format!(
                "qpact needs q equal to the number of wavelengths ({})",
                self.qpact.table.wavelengths.len()
            )));
        }
        if !self.eit.source_angles.is_empty() && self.eit.source_angles.len() != self.q {
            return Err(Error::Config("source_angles must list q angles".into()));
        }
        self.eit.phantom.validate()?;
        self.qpact.table.validate()?;
        self.qpact.reg.validate()?;
        self.admm.validate()?;
        self.incg.validate()
    }

    pub fn worker_threads(&self) -> usize {
        if self.threads == 0 {
            self.q
        } else {
            self.threads
        }
    }
}

/// Parses `text` into a TOML tree, applies `key=value` overrides, and
/// deserializes the result over the problem defaults. Returns the config
/// together with the completed tree, which is what gets snapshotted.
pub fn parse_config(text: &str, path: &Path, overrides: &[String]) -> Result<(ExperimentConfig, toml::Value)> {
    let mut tree: toml::Value = toml::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    complete_tree(&tree)
}

/// Deserializes a (possibly partial) tree on top of the defaults for its
/// `problem`, and returns the config with the completed tree.
pub fn complete_tree(tree: &toml::Value) -> Result<(ExperimentConfig, toml::Value)> {
    let problem = match tree.get("problem").and_then(|v| v.as_str()) {
        Some("qpact") => ExperimentConfig::qpact_default(),
        _ => ExperimentConfig::default(),
    };
    let mut full = config_tree(&problem);
    merge(&mut full, tree);
    let cfg: ExperimentConfig = full.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok((cfg, full))
}

pub fn from_tree(tree: &toml::Value) -> Result<ExperimentConfig> {
    complete_tree(tree).map(|(cfg, _)| cfg)
}

fn merge(base: &mut toml::Value, over: &toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<(ExperimentConfig, toml::Value)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path, overrides)
}

pub fn config_tree(cfg: &ExperimentConfig) -> toml::Value {
    toml::Value::try_from(cfg).expect("config serializes")
}

/// Sets a dotted key in the tree. The value is read as a TOML literal and
/// falls back to a bare string.
pub fn apply_override(tree: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut node = tree;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}` walks through a non-table")))?;
        node = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override `{key}` walks through a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let (cfg, _) = parse_config("", Path::new("x"), &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn default_roundtrips_through_toml() {
        for cfg in [ExperimentConfig::default(), ExperimentConfig::qpact_default()] {
            let text = toml::to_string(&cfg).unwrap();
            let (back, _) = parse_config(&text, Path::new("x"), &[]).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn overrides_land_in_tree_and_config() {
        let sets = vec![
            "admm.rho0=2.5".to_string(),
            "admm.consensus_norm=l2".to_string(),
            "q = 3".to_string(),
            "reg.alpha_tv=0".to_string(),
        ];
        let (cfg, tree) = parse_config("seed = 4\n", Path::new("x"), &sets).unwrap();
        assert_eq!(cfg.admm.rho0, 2.5);
        assert_eq!(cfg.admm.consensus_norm, crate::fem::NormKind::L2);
        assert_eq!(cfg.q, 3);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.reg.alpha_tv, 0.0);
        assert_eq!(tree["admm"]["rho0"].as_float(), Some(2.5));
    }

    #[test]
    fn problem_selects_defaults() {
        let (cfg, tree) = parse_config("problem = \"qpact\"\n", Path::new("x"), &["admm.rho0=0.5".into()]).unwrap();
        assert_eq!(cfg.q, 3);
        assert_eq!(cfg.mesh.square_n, Some(27));
        assert_eq!(cfg.admm.mu, 4.0);
        assert_eq!(cfg.admm.rho0, 0.5);
        assert_eq!(tree["q"].as_integer(), Some(3));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_config("bogus = 1\n", Path::new("x"), &[]).is_err());
        assert!(parse_config("q = 0\n", Path::new("x"), &[]).is_err());
        assert!(parse_config("", Path::new("x"), &["novalue".into()]).is_err());
        let err = parse_config("[mesh]\nfile = \"/nonexistent/m.mesh\"\n", Path::new("x"), &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/m.mesh"));
    }
}
