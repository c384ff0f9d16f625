use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn subvar(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subvar")).args(args).current_dir(cwd).env("SUBVAR_THREADS", "2").output().unwrap()
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

#[test]
fn flat_torus_preservation_passes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("flat-torus.toml");
    let out = subvar(&["run", "--config", cfg.to_str().unwrap(), "--out", "r"], dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("overall: PASS"));
    for f in ["summary.txt", "report.json", "tables/checks.csv"] {
        assert!(dir.path().join("r").join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r/report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn invalid_config_exits_with_error_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\n[model]\nid = \"flat-torus\"\n[integrator]\nstep = -1.0\nhorizon = 1.0\n").unwrap();
    let out = subvar(&["run", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!dir.path().join("subvar-out").exists());

    std::fs::write(&bad, "schema_version = 1\nunknown = 3\n[model]\nid = \"flat-torus\"\n").unwrap();
    assert_eq!(subvar(&["run", "--config", bad.to_str().unwrap()], dir.path()).status.code(), Some(2));
}

#[test]
fn list_models_names_every_model() {
    let out = subvar(&["list-models"], Path::new("."));
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for id in ["flat-torus", "warped-torus", "hopf-s3", "hopf-s7"] {
        assert!(text.contains(id), "{id}");
    }
    assert!(text.contains("xi1"));
}

#[test]
fn profile_writes_selected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("hopf-s7.toml");
    let out = subvar(&["profile", "--config", cfg.to_str().unwrap(), "--quantity", "dt-sec", "--quantity", "h-norm"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert!(header.iter().any(|h| h == "dt_sec") && header.iter().any(|h| h == "h_norm"));
    assert!(!header.iter().any(|h| h == "sec_t0"));
    assert!(rdr.records().count() > 10);

    let flat = scenario("flat-torus.toml");
    assert_eq!(subvar(&["profile", "--config", flat.to_str().unwrap()], dir.path()).status.code(), Some(2));
}
