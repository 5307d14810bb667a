use std::fs;
use std::path::Path;
use std::process::Command;

use east_lab::run::RunError;

fn run(config: &str, dir: &Path, extra: &[&str]) -> (i32, String) {
    let cfg = dir.join("exp.cfg");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_east-lab"))
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    (
        status.status.code().unwrap(),
        String::from_utf8_lossy(&status.stderr).into_owned(),
    )
}

fn manifest(dir: &Path) -> String {
    fs::read_to_string(dir.join("out/manifest.txt")).unwrap()
}

fn checksums(m: &str) -> Vec<String> {
    m.lines().filter(|l| l.starts_with("sha256.")).map(String::from).collect()
}

const PERSISTENCE: &str = "\
# persistence of (1,1)
kind = persistence
d = 2
p = 0.5
window_lower = -6 -6
window_upper = 1 1
times = 1 2 3 4 5
n = 1000
seed = 7
";

#[test]
fn persistence_run_writes_series_fit_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run(PERSISTENCE, dir.path(), &[]);
    assert_eq!(code, 0, "{err}");
    let series = fs::read_to_string(dir.path().join("out/persistence.csv")).unwrap();
    assert!(series.starts_with("# kind=persistence seed=7 d=2 p=0.5"));
    let rows: Vec<&str> = series.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "t,value,halfwidth");
    assert_eq!(rows.len(), 6);
    let fit = fs::read_to_string(dir.path().join("out/fit.csv")).unwrap();
    assert!(fit.contains("rate,prefactor,r_squared"));
    let m = manifest(dir.path());
    assert!(m.starts_with("status = ok\n"));
    assert!(m.contains("config.n = 1000"));
    assert_eq!(checksums(&m).len(), 2);
}

#[test]
fn identical_config_gives_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(PERSISTENCE, a.path(), &["--threads", "1"]).0, 0);
    assert_eq!(run(PERSISTENCE, b.path(), &["--threads", "4"]).0, 0);
    assert_eq!(checksums(&manifest(a.path())), checksums(&manifest(b.path())));
    for f in ["persistence.csv", "fit.csv"] {
        assert_eq!(
            fs::read(a.path().join("out").join(f)).unwrap(),
            fs::read(b.path().join("out").join(f)).unwrap()
        );
    }
    let c = tempfile::tempdir().unwrap();
    assert_eq!(run(PERSISTENCE, c.path(), &["--seed", "8"]).0, 0);
    assert_ne!(checksums(&manifest(a.path())), checksums(&manifest(c.path())));
}

#[test]
fn gap_of_single_site_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run("kind = gap\np = 0.5\nlength = 1\n", dir.path(), &[]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(dir.path().join("out/gap.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "1,1.0,0.0,1"), "{csv}");
}

#[test]
fn validation_errors_exit_one_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run("kind = persistence\np = 1.2\ntimes = 1\n", dir.path(), &[]);
    assert_eq!(code, 1);
    assert!(err.contains("`p`"));
    assert!(manifest(dir.path()).starts_with("status = validation-error"));

    let (code, err) = run("kind = nonsense\np = 0.5\n", dir.path(), &[]);
    assert_eq!(code, 1);
    assert!(err.contains("verify-lemma"));
}

#[test]
fn every_kind_runs() {
    let configs = [
        ("simulate", "kind = simulate\nd = 2\np = 0.4\nhorizon = 3\nwindow_lower = -2 -2\nwindow_upper = 1 1\n", vec!["events.csv", "occupation.csv", "initial.txt"]),
        ("relaxation", "kind = relaxation\nd = 2\np = 0.5\nmeasure = single-zero\nwindow_lower = 0 0\nwindow_upper = 1 1\ntimes = 1:4:1\nn_outer = 5\nn_inner = 200\nbootstrap = 50\n", vec!["relaxation.csv", "fit.csv"]),
        ("constants", "kind = constants\nd = 2\np = 0.5\nlambda_pp = 0.3\n", vec!["constants.txt"]),
        ("verify-lemma", "kind = verify-lemma\nd = 2\np = 0.5\nt = 4\nalpha = 0.125\nwindow_lower = -2 -2\nwindow_upper = 0 0\nn = 50\nexterior = 0\nmeasure = zeros\n", vec!["lemma.csv"]),
        ("fk-probe", "kind = fk-probe\nd = 1\np = 0.5\nwindow_lower = -1\nwindow_upper = 0\nexterior = 0\nmeasure = ones\nsite = -1\nt = 5\nn = 100\ndelta = 0.5\n", vec!["fk_probe.csv"]),
    ];
    for (name, cfg, files) in configs {
        let dir = tempfile::tempdir().unwrap();
        let (code, err) = run(cfg, dir.path(), &[]);
        assert_eq!(code, 0, "{name}: {err}");
        for f in files {
            assert!(dir.path().join("out").join(f).exists(), "{name}: missing {f}");
        }
        assert!(manifest(dir.path()).starts_with("status = ok"), "{name}");
    }
    let dir = tempfile::tempdir().unwrap();
    run("kind = constants\nd = 2\np = 0.5\n", dir.path(), &[]);
    let kv = fs::read_to_string(dir.path().join("out/constants.txt")).unwrap();
    assert!(kv.contains("c3_prime = 4.0546510810816"));
    assert!(kv.contains("delta_c_authoritative = false"));
    assert!(kv.contains("lambda_pp_increment"));
}

#[test]
fn exit_codes_follow_error_class() {
    assert_eq!(RunError::Runtime("x".into()).exit_code(), 2);
    assert_eq!(RunError::Counterexample("x".into()).exit_code(), 3);
}
