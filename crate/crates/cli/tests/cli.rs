use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hetero-rt"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("HETERO_RT_LOG", "error").output().expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn shipped_fixtures_pass_their_checks() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in ["nbody.toml", "nbody-bursty.toml", "md.toml"] {
        let out = dir.path().join("r.csv");
        let o = run(&["run", "--config", configs().join(cfg).to_str().unwrap(), "--out", out.to_str().unwrap(), "--check"]);
        assert_eq!(code(&o), 0, "{cfg}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    }
}

#[test]
fn unknown_memory_mode_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = run(&["run", "--mode", "lru", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lru"));
    assert!(!out.exists());
}

#[test]
fn bad_flags_and_experiments_are_usage_errors() {
    assert_eq!(code(&run(&["run", "--bogus"])), 2);
    assert_eq!(code(&run(&["run", "--experiment", "fig9", "--out", "/dev/null"])), 2);
    assert_eq!(code(&run(&["run", "--config", "/nonexistent.toml"])), 2);
}

#[test]
fn liveness_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("one.trace");
    std::fs::write(&trace, "0 force 1 10 64\n").unwrap();
    let out = dir.path().join("r.csv");
    let o = run(&["trace", "replay", "--trace", trace.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn dump_then_replay_matches_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("s.trace");
    let o = run(&["trace", "dump", "--out", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let direct = dir.path().join("d.csv");
    let replay = dir.path().join("p.csv");
    assert_eq!(code(&run(&["run", "--out", direct.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["trace", "replay", "--trace", trace.to_str().unwrap(), "--out", replay.to_str().unwrap()])), 0);
    let field = |p: &Path| {
        let text = std::fs::read_to_string(p).unwrap();
        text.lines().nth(1).unwrap().split(',').skip(2).collect::<Vec<_>>().join(",")
    };
    assert_eq!(field(&direct), field(&replay));
    assert_eq!(code(&run(&["trace", "roundtrip"])), 0);
}

#[test]
fn corrupt_trace_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.trace");
    std::fs::write(&trace, "# header\n0 force 1 10 64\n1 force x 10 64\n").unwrap();
    let o = run(&["trace", "replay", "--trace", trace.to_str().unwrap(), "--out", "/dev/null"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn append_adds_run_id_and_logs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let log = dir.path().join("log.csv");
    let o = out.to_str().unwrap();
    assert_eq!(code(&run(&["run", "--experiment", "reuse-modes", "--out", o, "--log", log.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["run", "--seed", "9", "--out", o, "--append"])), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let ids: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["0", "0", "0", "1"]);
    for mode in ["redundant", "reuse", "reuse_sorted"] {
        assert!(dir.path().join(format!("log-{mode}-0.csv")).exists(), "{mode}");
    }
}

#[test]
fn oracle_reports_errors_and_honours_limit() {
    let o = run(&["oracle", "--particles", "256", "--theta", "0"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("median_rel_error"));
    assert_eq!(code(&run(&["oracle", "--particles", "256", "--theta", "1.0", "--max-median", "1e-12"])), 1);
}
