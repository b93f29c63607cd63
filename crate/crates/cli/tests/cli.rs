use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ad-market"));
    c.env_remove("AD_SOLVER_PROFILE");
    c
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn prices(v: &serde_json::Value) -> Vec<String> {
    v["prices"].as_array().unwrap().iter().map(|p| p.as_str().unwrap().to_string()).collect()
}

fn solve(path: &Path, extra: &[&str]) -> Output {
    run(bin().arg("solve").arg(path).args(extra))
}

#[test]
fn solves_the_small_examples() {
    let dir = TempDir::new().unwrap();
    for (text, want) in [
        (r#"{"utilities":[[1]]}"#, vec!["1"]),
        (r#"{"utilities":[[0,1],[1,0]]}"#, vec!["1", "1"]),
        (r#"{"utilities":[[1,1],[0,1]], "name": "reducible"}"#, vec!["1", "2"]),
    ] {
        let p = write(&dir, "m.json", text);
        for mode in ["exact", "fixed"] {
            let out = solve(&p, &["--mode", mode]);
            assert_eq!(out.status.code(), Some(0), "{text} {mode}");
            let v = json(&out);
            assert_eq!(prices(&v), want);
            assert_eq!(v["verified"], true);
            assert_eq!(v["denominator"], "1");
            assert_eq!(v["mode"], mode);
        }
    }
}

#[test]
fn exit_codes_for_bad_input() {
    let dir = TempDir::new().unwrap();
    for text in [
        r#"{"utilities":[[1,1],[1]]}"#,
        r#"{"utilities":[[1,-1],[1,1]]}"#,
        r#"{"utilities":[[1,1.5],[1,1]]}"#,
        r#"{"utilities":[[0,0],[1,1]]}"#,
        r#"{"utilities":[]}"#,
        "not json",
    ] {
        let p = write(&dir, "bad.json", text);
        assert_eq!(solve(&p, &[]).status.code(), Some(2), "{text}");
    }
    let missing = dir.path().join("missing.json");
    assert_eq!(solve(&missing, &[]).status.code(), Some(2));
}

#[test]
fn singleton_without_self_loop_is_exit_3() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "m.json", r#"{"utilities":[[0,1,0],[0,1,0],[1,0,1]]}"#);
    assert_eq!(solve(&p, &[]).status.code(), Some(3));
}

#[test]
fn verify_round_trip_and_rejection() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "m.json", r#"{"utilities":[[0,1],[1,0]]}"#);
    let sol = dir.path().join("m.sol");
    let out = solve(&inst, &["--out", sol.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let ok = run(bin().arg("verify").arg(&inst).arg(&sol));
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json(&ok)["equilibrium"], true);

    let bad = write(
        &dir,
        "bad.sol",
        r#"{"prices":["1","2"],"denominator":"1","allocations":[],"iterations":0,"mode":"fixed","verified":true}"#,
    );
    let out = run(bin().arg("verify").arg(&inst).arg(&bad));
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    assert_eq!(v["equilibrium"], false);
    assert!(!v["violations"].as_array().unwrap().is_empty());

    // allocations are recomputed, not trusted
    let tampered = write(
        &dir,
        "t.sol",
        r#"{"prices":["5","5"],"denominator":"1","allocations":[[{"num":"7","den":"1"}]],"iterations":0,"mode":"exact","verified":false}"#,
    );
    assert_eq!(run(bin().arg("verify").arg(&inst).arg(&tampered)).status.code(), Some(0));

    let garbage = write(&dir, "g.sol", r#"{"prices":["x"]}"#);
    assert_eq!(run(bin().arg("verify").arg(&inst).arg(&garbage)).status.code(), Some(2));
}

#[test]
fn gen_is_deterministic() {
    let one = run(bin().args(["gen", "--n", "1", "--umax", "1", "--seed", "0"]));
    let v: serde_json::Value = json(&one);
    assert_eq!(v["utilities"], serde_json::json!([[1]]));
    let a = run(bin().args(["gen", "--n", "3", "--umax", "5", "--seed", "7"]));
    let b = run(bin().args(["gen", "--n", "3", "--umax", "5", "--seed", "7"]));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn generated_instances_solve_and_verify() {
    let dir = TempDir::new().unwrap();
    for seed in 0..6 {
        let p = dir.path().join(format!("g{seed}.json"));
        let s = seed.to_string();
        let out = run(bin().args(["gen", "--n", "4", "--irreducible", "--seed", &s, "--out", p.to_str().unwrap()]));
        assert_eq!(out.status.code(), Some(0));
        let inst: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        let u: Vec<Vec<u64>> = serde_json::from_value(inst["utilities"].clone()).unwrap();
        assert!(ad_market::Market::new(u).unwrap().validate().strongly_connected);

        let sol = dir.path().join(format!("g{seed}.sol"));
        assert_eq!(solve(&p, &["--out", sol.to_str().unwrap()]).status.code(), Some(0));
        assert_eq!(run(bin().arg("verify").arg(&p).arg(&sol)).status.code(), Some(0));
    }
}

#[test]
fn trace_lines_and_summary() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "m.json", r#"{"utilities":[[4,6,0,3],[3,0,0,8],[0,3,10,0],[7,7,8,8]]}"#);
    let trace = dir.path().join("t.jsonl");
    let out = solve(&p, &["--mode", "exact", "--trace", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len() as u64, json(&out)["iterations"].as_u64().unwrap());
    for (k, l) in lines.iter().enumerate() {
        assert_eq!(l["iteration"].as_u64(), Some(k as u64 + 1));
        assert!(["XMAX", "BALANCING"].contains(&l["kind"].as_str().unwrap()));
        assert!(l["l2_sq_after"].is_string());
    }
    let summary = run(bin().arg("trace").arg(&trace));
    assert_eq!(summary.status.code(), Some(0));
    assert_eq!(json(&summary)["lines"].as_u64(), Some(lines.len() as u64));
}

#[test]
fn profile_env_overrides_flag() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "m.json", r#"{"utilities":[[0,1],[1,0]]}"#);
    let out = run(bin().env("AD_SOLVER_PROFILE", "nonsense").arg("solve").arg(&p).args(["--profile", "paper"]));
    assert_eq!(out.status.code(), Some(2));
    let out = run(bin().env("AD_SOLVER_PROFILE", "paper").arg("solve").arg(&p).args(["--profile", "fast"]));
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn batch_and_fuzz() {
    let dir = TempDir::new().unwrap();
    let a = write(&dir, "a.json", r#"{"utilities":[[0,1],[1,0]]}"#);
    let b = write(&dir, "b.json", r#"{"utilities":[[2,1],[3,1]]}"#);
    let out = run(bin().arg("batch").arg(&a).arg(&b).args(["--jobs", "2"]));
    assert_eq!(out.status.code(), Some(0));
    let lines: Vec<serde_json::Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(prices(&lines[1]), vec!["2", "1"]);

    let c = write(&dir, "c.json", r#"{"utilities":[[0,1,0],[0,1,0],[1,0,1]]}"#);
    assert_eq!(run(bin().arg("batch").arg(&a).arg(&c)).status.code(), Some(1));

    let out = run(bin().args(["fuzz", "--n", "3", "--count", "8", "--seed", "5"]));
    assert_eq!(out.status.code(), Some(0));
}
