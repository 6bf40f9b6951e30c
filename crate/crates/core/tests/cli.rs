use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn mwk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mwk")).args(args).env_remove("MWK_THREADS").output().expect("spawn mwk")
}

fn run_in(dir: &Path, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![config.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    mwk(&args)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn flows_sweep_has_both_pipelines_and_close_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &scenario("flows.toml"), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("flows.csv"));
    assert_eq!(header, ["lambda", "M", "flow_oracle", "flow_2nd", "abs_err", "eta", "dt"]);
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let oracle: f64 = r[2].parse().unwrap();
        let err: f64 = r[4].parse().unwrap();
        assert!(err < 0.05 * oracle.abs(), "row {r:?}");
        assert_eq!(r[5], "0.05");
        assert_eq!(r[6], "0.05");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("flows.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn kms_check_on_random_four_level_system() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &scenario("kms-check.toml"), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("kms-check.csv"));
    let k = column(&header, "residual");
    let worst = rows.iter().map(|r| r[k].parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!(worst < 1e-8, "max residual {worst}");
    assert_eq!(rows.len(), 3 * (3 + 4));
}

#[test]
fn empty_sweep_axis_is_a_schema_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("flows.toml")).unwrap().replace("lambda = [0.0025, 0.005]", "lambda = []");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = run_in(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep.lambda"));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "kind = \"kms-check\"\nbogus = 1\n").unwrap();
    let out = run_in(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn stability_guard_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("patterns.toml")).unwrap().replace("dt = 0.04", "dt = 0.5");
    let cfg = dir.path().join("coarse.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = run_in(dir.path(), &cfg, &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    for name in ["simulate", "correspond", "patterns"] {
        let cfg = scenario(&format!("{name}.toml"));
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        assert!(run_in(a.path(), &cfg, &["--threads", "1"]).status.success());
        assert!(run_in(b.path(), &cfg, &["--threads", "3"]).status.success());
        for file in [format!("{name}.csv"), format!("{name}.manifest.json")] {
            let x = std::fs::read(a.path().join(&file)).unwrap();
            let y = std::fs::read(b.path().join(&file)).unwrap();
            assert_eq!(x, y, "{file} differs");
        }
    }
}

#[test]
fn every_example_scenario_runs() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut names: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for cfg in names {
        let out = tempfile::tempdir().unwrap();
        let r = run_in(out.path(), &cfg, &[]);
        assert!(r.status.success(), "{}: {}", cfg.display(), String::from_utf8_lossy(&r.stderr));
        let text = std::fs::read_to_string(out.path().join(format!(
            "{}.csv",
            cfg.file_stem().unwrap().to_str().unwrap()
        )))
        .unwrap();
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }
}

#[test]
fn self_test_passes_without_a_scenario() {
    let out = mwk(&["--self-test"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.lines().count() >= 5 && stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let bad = Command::new(env!("CARGO_BIN_EXE_mwk"))
        .args([scenario("kms-check.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .env("MWK_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let good = Command::new(env!("CARGO_BIN_EXE_mwk"))
        .args([scenario("kms-check.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .env("MWK_THREADS", "2")
        .output()
        .unwrap();
    assert!(good.status.success());
}
