use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn path(rel: &str) -> String {
    corpus().join(rel).display().to_string()
}

fn minisched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minisched")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn encode_reproduces_the_count_golden() {
    let o = minisched(&["encode", &path("count/count.hal")]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), fs::read_to_string(corpus().join("count/count.pvl")).unwrap());
}

#[test]
fn emit_writes_the_listing5_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("blur.c");
    let o = minisched(&["emit", &path("blur/blur.hal"), &path("blur/listing5.sched"), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(out).unwrap(), fs::read_to_string(corpus().join("blur/listing5.c")).unwrap());
}

#[test]
fn emit_metrics_as_json() {
    let o = minisched(&["emit", &path("blur/blur.hal"), &path("blur/listing5.sched"), "--json"]);
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["user_loa"], 5);
    assert!(m["ann_incr"].as_f64().unwrap() >= 5.0);
}

#[test]
fn lower_prints_the_nest() {
    let o = minisched(&["lower", &path("blur/blur.hal"), &path("blur/listing5.sched")]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("parallel y.yo in [0, 127]"), "{s}");
    assert!(s.contains("store blur_x[10240]"));
}

#[test]
fn backend_reports_per_seed_as_json() {
    let o = minisched(&[
        "check-backend",
        &path("blur/blur.hal"),
        &path("blur/listing5.sched"),
        "--scale",
        "x=16,y=16",
        "--seeds",
        "3",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let runs = v.as_array().unwrap();
    assert_eq!(runs.len(), 3);
    for (i, r) in runs.iter().enumerate() {
        assert_eq!(r["pipeline"], "blur");
        assert_eq!(r["schedule"], "listing5");
        assert_eq!(r["seed"], i as u64);
        assert_eq!(r["verdict"], "pass");
        assert!(r["findings"].as_array().unwrap().is_empty());
        assert!(r["stats"]["points"].as_u64().unwrap() > 0);
    }
}

#[test]
fn race_exits_with_findings() {
    let o = minisched(&["check-backend", &path("race/race.hal"), &path("race/bad.sched")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("Race"));
}

#[test]
fn frontend_check_passes() {
    let o = minisched(&["check-frontend", &path("matmul/matmul.hal"), "--cap", "8", "--seeds", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches(": pass").count(), 2);
}

#[test]
fn usage_and_parse_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.hal");
    fs::write(&bad, "pipeline p {\n  func f(x in 0..4) = x +;\n}\n").unwrap();
    let o = minisched(&["encode", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.hal:"));

    assert_eq!(minisched(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(minisched(&["encode", "/does/not/exist.hal"]).status.code(), Some(2));
    let o = minisched(&["check-backend", &path("blur/blur.hal"), &path("blur/v0.sched"), "--scale", "q=4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_minisched"))
            .args(["check-backend", &path("count/count.hal"), &path("count/parallel_x.sched"), "--seeds", "4"])
            .env("MINI_SCHED_THREADS", threads)
            .output()
            .unwrap()
    };
    let one = run("1");
    assert_eq!(one.status.code(), Some(0));
    let strip = |o: &Output| stdout(o).lines().map(|l| l.split(" (").next().unwrap().to_string()).collect::<Vec<_>>();
    assert_eq!(strip(&one), strip(&run("4")));
    assert_eq!(run("many").status.code(), Some(2));
}

#[test]
fn report_totals_are_sums() {
    let dir = tempfile::tempdir().unwrap();
    for alg in ["count", "conv1d"] {
        let d = dir.path().join(alg);
        fs::create_dir(&d).unwrap();
        for f in fs::read_dir(corpus().join(alg)).unwrap() {
            let f = f.unwrap().path();
            fs::copy(&f, d.join(f.file_name().unwrap())).unwrap();
        }
    }
    let o = minisched(&["report", dir.path().to_str().unwrap(), "--cap", "8", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.len(), 9);

    let o = minisched(&["report", dir.path().to_str().unwrap(), "--cap", "8"]);
    let md = stdout(&o);
    let total = md.lines().last().unwrap();
    let loa: u64 = rows.iter().map(|r| r["loa"].as_u64().unwrap()).sum();
    let loc: u64 = rows.iter().map(|r| r["loc"].as_u64().unwrap()).sum();
    assert!(total.starts_with("| **Total** | 9 runs"), "{total}");
    assert!(total.contains(&format!("| {loc} | {loa} |")), "{total}");
    assert!(total.contains("9/9 pass"));
}
