use std::fs;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_blowuplab"));
    c.env_remove("BLOWUPLAB_OUT");
    c
}

#[test]
fn config_error_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[problem]\np = 3\nbogus = 4\n").unwrap();
    let out = bin().args(["spectral", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:4"), "{err}");
}

#[test]
fn spectral_writes_manifest_and_hashed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["spectral", "--jobs", "1", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("criterion 1 [") && stdout.contains("criterion 2 ["));

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest_spectral.json")).unwrap()).unwrap();
    assert_eq!(m["pass"], true);
    let hash = m["config_hash"].as_str().unwrap().to_string();
    let arts = m["artifacts"].as_array().unwrap();
    assert!(!arts.is_empty());
    for a in arts {
        let rel = a.as_str().unwrap();
        let body = fs::read_to_string(dir.path().join(rel)).unwrap();
        if rel.ends_with(".csv") {
            assert_eq!(body.lines().next().unwrap(), format!("# config_hash={hash}"));
        }
    }
}

#[test]
fn env_overrides_out_and_run_uses_config_suite() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from_env");
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[experiment]\nsuite = \"spectral\"\n").unwrap();
    let out = bin()
        .env("BLOWUPLAB_OUT", &env_out)
        .args(["run", "--jobs", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("from_flag"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(env_out.join("manifest_spectral.json").exists());
    assert!(!dir.path().join("from_flag").exists());
}

#[test]
fn plot_subcommand_rejects_wrong_schema() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    fs::write(&csv, "# config_hash=0\na,b\n1,2\n").unwrap();
    let out = bin().arg("plot").arg(&csv).args(["--kind", "decay-loglog"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("quantity"));
}
