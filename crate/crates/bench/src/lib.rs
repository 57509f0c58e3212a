//! Corpus fixtures shared by the benchmarks.

use std::path::PathBuf;

use minisched::annotate::lower_annotated;
use minisched::corpus::{cap, entries, load_pipeline, load_schedule, Entry};
use minisched::lower::LoopNest;
use minisched::parse::Directive;
use minisched::Pipeline;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn entry(name: &str) -> Entry {
    entries(&corpus_dir())
        .expect("corpus directory")
        .into_iter()
        .find(|e| e.name == name)
        .unwrap_or_else(|| panic!("no corpus entry `{name}`"))
}

/// The pipeline with every output extent capped at `limit`.
pub fn pipeline(alg: &str, limit: Option<i64>) -> Pipeline {
    let mut p = load_pipeline(&entry(alg).pipeline).expect("pipeline parses");
    if let Some(l) = limit {
        cap(&mut p, l).expect("cap applies");
    }
    p
}

pub fn schedule(alg: &str, sched: &str, p: &Pipeline) -> Vec<Directive> {
    load_schedule(entry(alg).schedule(sched).expect("schedule exists"), p).expect("schedule parses")
}

pub fn nest(alg: &str, sched: &str, limit: Option<i64>) -> (Pipeline, LoopNest) {
    let p = pipeline(alg, limit);
    let ds = schedule(alg, sched, &p);
    let n = lower_annotated(&p, &ds).expect("schedule lowers");
    (p, n)
}
