use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tldpinn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tldpinn")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
problem = "heat_test"
n_t = 3
n_r = 16
max_iters_initial = 50
max_iters = 10
epsilon = 1e-9
seed = 3

[net]
depth = 2
width = 8
modes = 2

[oracle]
grid_fd = 32
substeps = 10
"#;

fn tiny(dir: &Path, extra: &str) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, format!("{TINY}\n{extra}")).unwrap();
    path.display().to_string()
}

#[test]
fn verify_schemes_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = tldpinn(&["verify", "schemes"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("0 failed"), "{s}");
    assert_eq!(s.matches("order conditions").count(), 7);
}

#[test]
fn verify_autodiff_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = tldpinn(&["verify", "autodiff"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn solve_writes_verified_outputs_deterministically() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny(d.path(), "");
    for out in ["a", "b"] {
        let o = tldpinn(&["solve", "--config", &cfg, "--out", out], d.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("relative_l2"));
    }
    for f in ["records.csv", "errors.csv", "field.dat", "config.toml", "checkpoints/theta_0003.bin"] {
        let a = fs::read(d.path().join("a").join(f)).unwrap();
        let b = fs::read(d.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let m = tldpinn::report::RunManifest::load(&d.path().join("a")).unwrap();
    assert!(m.verify(&d.path().join("a")).is_empty());
    assert_eq!(m.seed, 3);
    assert!(d.path().join(".oracle-cache").is_dir());
}

#[test]
fn overrides_apply_and_bad_input_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny(d.path(), "");
    let o = tldpinn(&["solve", "--config", &cfg, "--seed", "9", "--scheme", "backward_euler", "--transfer", "last_k:1", "--out", "o"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let m = tldpinn::report::RunManifest::load(&d.path().join("o")).unwrap();
    assert_eq!((m.seed, m.config.scheme.as_str(), m.config.transfer.to_string()), (9, "backward_euler", "last_k:1".into()));

    for args in [
        vec!["solve", "--problem", "rd", "--preset", "huge"],
        vec!["solve", "--problem", "nope"],
        vec!["solve"],
        vec!["solve", "--config", &cfg, "--scheme", "leapfrog"],
        vec!["solve", "--config", &cfg, "--transfer", "some"],
        vec!["ablate", ""],
        vec!["ablate", "--problem", "rd"],
        vec!["verify", "everything"],
    ] {
        assert_eq!(tldpinn(&args, d.path()).status.code(), Some(2), "{args:?}");
    }
    let bad = tiny(d.path(), "bogus_key = 1");
    assert_eq!(tldpinn(&["solve", "--config", &bad], d.path()).status.code(), Some(2));
}

#[test]
fn numerical_blow_up_exits_three_and_keeps_partial_outputs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny(d.path(), "[lr]\ninitial = 1e300\n");
    let o = tldpinn(&["solve", "--config", &cfg, "--out", "o"], d.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("o/manifest.toml").exists());
}

#[test]
fn ablation_tables_have_one_row_per_value() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny(d.path(), "");
    let o = tldpinn(&["ablate", "transfer", "--config", &cfg, "--out", "t"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let table = fs::read_to_string(d.path().join("t/ablation_transfer.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["none", "last_k:1", "last_k:2", "last_k:3", "all"]);
    let o = tldpinn(&["ablate", "scheme", "--config", &cfg, "--out", "s"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let table = fs::read_to_string(d.path().join("s/ablation_scheme.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",ok")), "{table}");
}

#[test]
fn oracle_reports_cache_hits() {
    let d = tempfile::tempdir().unwrap();
    let args = ["oracle", "--problem", "heat_test", "--n-t", "4", "--grid", "512", "--substeps", "20", "--out", "heat.dat"];
    let first = tldpinn(&args, d.path());
    assert_eq!(first.status.code(), Some(0));
    let s = stdout(&first);
    assert!(s.contains("computed"), "{s}");
    let fd: f64 = s.lines().find(|l| l.starts_with("finite differences")).unwrap().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(fd < 1e-7, "{s}");
    let again = tldpinn(&args, d.path());
    assert!(stdout(&again).contains("cache-hit"));
    assert!(fs::read_to_string(d.path().join("heat.dat")).unwrap().lines().count() > 5 * 65);
    assert_eq!(tldpinn(&["oracle", "--problem", "nope"], d.path()).status.code(), Some(2));
}
