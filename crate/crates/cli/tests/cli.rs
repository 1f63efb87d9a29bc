use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL_MPC: [&str; 4] = ["--set", "mpc.np=30", "--set", "mpc.nc=5"];

fn scg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scg"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = scg(out, args);
    assert!(o.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

#[test]
fn baseline_rerun_from_snapshot_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("a");
    let second = tmp.path().join("b");
    ok(&first, &[&["baseline"][..], &SMALL_MPC].concat());
    let snapshot = first.join("baseline").join("config.toml");
    ok(&second, &["baseline", "--config", snapshot.to_str().unwrap()]);
    for name in ["baseline_plus.jsonl", "baseline_minus.jsonl", "baseline.json", "config.toml"] {
        assert_eq!(read(&first.join("baseline"), name), read(&second.join("baseline"), name), "{name}");
    }
}

#[test]
fn short_training_rerun_from_snapshot_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("a");
    let second = tmp.path().join("b");
    ok(&first, &[&["train", "--preset", "desk", "--episodes", "2"][..], &SMALL_MPC].concat());
    let snapshot = first.join("train").join("config.toml");
    ok(&second, &["train", "--config", snapshot.to_str().unwrap()]);
    let a = first.join("train");
    let b = second.join("train");
    for name in ["curves.csv", "policies.csv", "trajectory_first.jsonl", "trajectory_last.jsonl", "summary.json"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    let curves = String::from_utf8(read(&a, "curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 3);
    assert_eq!(curves.lines().next().unwrap(), "episode,return,mean_pi1_group1,mean_pi1_group2");
}

#[test]
fn zero_episodes_writes_header_only_curves() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &[&["train", "--episodes", "0"][..], &SMALL_MPC].concat());
    let curves = String::from_utf8(read(&tmp.path().join("train"), "curves.csv")).unwrap();
    assert_eq!(curves, "episode,return,mean_pi1_group1,mean_pi1_group2\n");
}

#[test]
fn single_cell_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["sweep", "--n1", "10", "--rho", "8"]);
    let csv = String::from_utf8(read(&tmp.path().join("sweep"), "sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "N1,rho_s,sigma1,sigma2,mss1,mss2,ci");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("10,8,"));
}

#[test]
fn learned_sweep_independent_of_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let base = [&["sweep", "--mode", "learned", "--n1", "5:10:5", "--rho", "8", "--episodes", "1"][..], &SMALL_MPC].concat();
    let one = tmp.path().join("one");
    let two = tmp.path().join("two");
    ok(&one, &[&base[..], &["--jobs", "1"]].concat());
    ok(&two, &[&base[..], &["--jobs", "2"]].concat());
    let a = read(&one.join("sweep"), "sweep_learned.csv");
    assert_eq!(a, read(&two.join("sweep"), "sweep_learned.csv"));
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 3);
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["baseline", "--set", "mpc.nc=5000"],
        &["baseline", "--set", "mpc.no_such_key=1"],
        &["train", "--preset", "nonexistent"],
        &["sweep", "--rho", "0.5"],
    ];
    for args in cases {
        assert_eq!(scg(tmp.path(), args).status.code(), Some(2), "{args:?}");
    }
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[mpc]\nunknown = 3\n").unwrap();
    assert_eq!(scg(tmp.path(), &["baseline", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn mjls_reports_case_three_radius() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["mjls", "--census", "10,0,0,10"]);
    let report = String::from_utf8(read(&tmp.path().join("mjls"), "mjls.json")).unwrap();
    assert!(stdout.contains("1.00198") || report.contains("1.00198"), "{stdout}");
}

#[test]
fn graph_generation_summary() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["graph-gen", "--nodes", "40", "--count", "3"]);
    let dir = tmp.path().join("graph-gen");
    let csv = String::from_utf8(read(&dir, "graphs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], "40");
        assert_eq!(fields[5], "1");
    }
    assert!(dir.join("graphs/graph_0002.edges").exists());
}
