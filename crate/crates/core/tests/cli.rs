use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use oddflow::io::{list_snapshots, Snapshot, DIAG_SCHEMA, LP_SCHEMA};

const SMALL: &str = r#"{
  "grid": { "n": 32 },
  "dynamics": { "dt": 0.002, "t_end": 0.1 },
  "output": { "diag_every": 10, "snapshot_every": 1 }
}"#;

fn oddflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oddflow")).args(args).env_remove("ODDFLOW_THREADS").output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn simulate(dir: &Path, config: &str) -> Output {
    let out = dir.join("out");
    oddflow(&["simulate", "--config", config, "--out", out.to_str().unwrap(), "--quiet"])
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn simulate_writes_diagnostics_and_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = simulate(tmp.path(), &cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());

    let diag = fs::read_to_string(tmp.path().join("out/diag.csv")).unwrap();
    let mut lines = diag.lines();
    assert_eq!(lines.next().unwrap(), DIAG_SCHEMA.header());
    assert_eq!(lines.count(), 6);

    let snaps = list_snapshots(&tmp.path().join("out")).unwrap();
    assert_eq!(snaps.len(), 6);
    let last = Snapshot::read(snaps.last().unwrap()).unwrap();
    assert!((last.t - 0.1).abs() < 1e-12);
    assert_eq!(last.grid().n(), 32);
    assert!(last.pressure.is_some() && last.big_u.is_some());
}

#[test]
fn runs_are_bitwise_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let text = SMALL.replace("\"grid\"", "\"initial\": { \"random_modes\": 3 }, \"grid\"");
    for dir in [a.path(), b.path()] {
        let cfg = write_config(dir, &text);
        let out = dir.join("out");
        let o = oddflow(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "11", "--quiet"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let files = |p: &Path| {
        let mut v: Vec<_> = fs::read_dir(p.join("out")).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    let names = files(a.path());
    assert_eq!(names, files(b.path()));
    for name in names {
        let x = fs::read(a.path().join("out").join(&name)).unwrap();
        let y = fs::read(b.path().join("out").join(&name)).unwrap();
        assert!(x == y, "{name:?} differs");
    }
}

#[test]
fn lp_analyze_reads_simulation_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    assert_eq!(code(&simulate(tmp.path(), &cfg)), 0);
    let snaps = tmp.path().join("out");
    let lp = tmp.path().join("lp");
    let o = oddflow(&["lp-analyze", "--snapshots", snaps.to_str().unwrap(), "--s", "-0.5", "--q", "inf", "--out", lp.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(lp.join(LP_SCHEMA.file)).unwrap();
    assert_eq!(text.lines().next().unwrap(), LP_SCHEMA.header());
    assert!(text.lines().any(|l| l.starts_with("trajectory,") && l.contains(",chemin_lerner,")));
}

#[test]
fn unknown_key_reports_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{ "dynamics": { "t_ned": 1.0 } }"#);
    let o = simulate(tmp.path(), &cfg);
    assert_eq!(code(&o), 5);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dynamics.t_ned"), "{err}");
}

#[test]
fn config_failures_map_to_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.json");
    assert_eq!(code(&simulate(tmp.path(), missing.to_str().unwrap())), 3);

    let cfg = write_config(tmp.path(), "{ \"grid\": ");
    assert_eq!(code(&simulate(tmp.path(), &cfg)), 4);

    let cfg = write_config(tmp.path(), r#"{ "grid": { "n": "sixty-four" } }"#);
    assert_eq!(code(&simulate(tmp.path(), &cfg)), 5);

    let cfg = write_config(tmp.path(), r#"{ "grid": { "n": 48 } }"#);
    assert_eq!(code(&simulate(tmp.path(), &cfg)), 6);

    let cfg = write_config(tmp.path(), r#"{ "viscosity": { "rho_star": 0.95 } }"#);
    assert_eq!(code(&simulate(tmp.path(), &cfg)), 6);
}

#[test]
fn usage_and_io_failures() {
    assert_eq!(code(&oddflow(&[])), 2);
    assert_eq!(code(&oddflow(&["simulate", "--bogus"])), 2);

    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let o = oddflow(&["verify", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&o), 7);
}

#[test]
fn corrupt_snapshot_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let snaps = tmp.path().join("snaps");
    fs::create_dir(&snaps).unwrap();
    fs::write(snaps.join("snap_000000.oddf"), vec![0u8; 100]).unwrap();
    let out = tmp.path().join("lp");
    let o = oddflow(&["lp-analyze", "--snapshots", snaps.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 9);
}

#[test]
fn help_lists_exit_codes_and_columns() {
    let o = oddflow(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("Exit status"));
    assert!(text.contains(&format!("{} (", DIAG_SCHEMA.file)));
    assert!(text.contains("elsasser_residual"));
}
