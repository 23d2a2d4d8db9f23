use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_admm-pde"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

#[test]
fn missing_config_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["invert", "--config", "does-not-exist.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does-not-exist.toml"));
}

#[test]
fn usage_errors_exit_with_1_and_help_with_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(cli(&["mesh", "--set", "no_equals_sign"], dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["mesh", "--set", "unknown_key=3"], dir.path()).status.code(), Some(1));
}

#[test]
fn mesh_and_synth_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["mesh", "--out", "o", "--set", "mesh.level=2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("o/mesh.mesh").exists());

    let out = cli(&["synth", "--out", "s", "--set", "mesh.level=2", "--set", "q=2", "--seed", "3"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.toml", "mesh.mesh", "m_true.field", "data_0.field", "data_1.field"] {
        assert!(dir.path().join("s").join(f).exists(), "{f}");
    }
    let snapshot = std::fs::read_to_string(dir.path().join("s/config.toml")).unwrap();
    assert!(snapshot.contains("seed = 3"));
}

#[test]
fn invert_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &["invert", "--out", "r", "--set", "mesh.level=2", "--set", "q=2", "--set", "admm.max_global_iter=3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = dir.path().join("r");
    let summary = std::fs::read_to_string(r.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().nth(1).unwrap().ends_with(",ok"));
    for f in ["history.csv", "counters.csv", "errors.csv", "fields/m.field"] {
        assert!(r.join("admm_h1_q2").join(f).exists(), "{f}");
    }
}

#[test]
fn check_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["check", "--seed", "5"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            admm_pde::experiments::config::load_config(&path, &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
