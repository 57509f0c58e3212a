use std::path::PathBuf;

use minisched::annotate::lower_annotated;
use minisched::check::{check_annotations, eval_reference, run_lowered, FindingKind, LoweredProgram, Valuation};
use minisched::corpus::{cap, entries, load_pipeline, load_schedule};
use minisched::lower::LoopNest;

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn nests(limit: i64) -> Vec<(String, LoopNest)> {
    let mut out = Vec::new();
    for e in entries(&corpus_dir()).unwrap() {
        let mut p = load_pipeline(&e.pipeline).unwrap();
        cap(&mut p, limit).unwrap();
        for s in &e.schedules {
            let label = format!("{}/{}", e.name, s.file_stem().unwrap().to_string_lossy());
            let ds = load_schedule(s, &p).unwrap();
            out.push((label, lower_annotated(&p, &ds).unwrap()));
        }
    }
    out
}

#[test]
fn every_schedule_computes_the_reference() {
    for (label, n) in nests(16) {
        let mut prog = LoweredProgram::new(&n).unwrap();
        for seed in 0..3 {
            let v = Valuation::random(&n.pipeline, seed);
            let want = eval_reference(&n.pipeline, &v).unwrap();
            assert_eq!(prog.run(&v).unwrap(), want, "{label} seed {seed}");
        }
    }
}

#[test]
fn generated_annotations_hold() {
    for (label, n) in nests(16) {
        if label == "race/bad" {
            continue;
        }
        let r = check_annotations(&n, &Valuation::random(&n.pipeline, 11));
        assert!(r.passed(), "{label}: {:?}", r.findings);
    }
}

#[test]
fn racy_schedule_is_reported() {
    let (_, n) = nests(16).into_iter().find(|(l, _)| l == "race/bad").unwrap();
    let r = check_annotations(&n, &Valuation::random(&n.pipeline, 0));
    assert!(r.has(FindingKind::Race), "{:?}", r.findings);
}

#[test]
fn annotations_hold_without_user_annotations() {
    for e in entries(&corpus_dir()).unwrap() {
        let mut p = load_pipeline(&e.pipeline).unwrap();
        cap(&mut p, 16).unwrap();
        let bare = p.without_user_annotations();
        for s in &e.schedules {
            if e.name == "race" && s.ends_with("bad.sched") {
                continue;
            }
            let n = lower_annotated(&bare, &load_schedule(s, &bare).unwrap()).unwrap();
            let r = check_annotations(&n, &Valuation::random(&bare, 5));
            assert!(r.passed(), "{}: {:?}", s.display(), r.findings);
            assert_eq!(run_lowered(&n, &Valuation::random(&bare, 5)).unwrap(), eval_reference(&bare, &Valuation::random(&bare, 5)).unwrap());
        }
    }
}
