use std::fs;
use std::path::PathBuf;

use minisched::parse::{parse_pipeline, parse_pipeline_named, parse_schedule, print_pipeline, Directive, ParseError, ScheduleError};
use minisched::{DiagnosticKind, Pipeline, StageKind};
use proptest::prelude::*;

fn corpus(rel: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(rel);
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn load(alg: &str) -> Pipeline {
    parse_pipeline_named(alg, &corpus(&format!("{alg}/{alg}.hal"))).unwrap()
}

fn has_kind(err: ParseError, kind: DiagnosticKind) -> bool {
    match err {
        ParseError::Validation(ds) => ds.iter().any(|d| d.kind == kind),
        _ => false,
    }
}

#[test]
fn blur_parses() {
    let p = load("blur");
    assert_eq!(p.funcs.len(), 2);
    assert_eq!(p.output, "blur_y");
    assert_eq!(p.requires.len(), 2);
    assert_eq!(p.ensures.len(), 1);
    let inp = p.buffer("inp").unwrap();
    assert_eq!(inp.dims[0].interval.extent, 1026);
    let bx = p.func("blur_x").unwrap();
    assert_eq!(bx.dims[1].interval.extent, 1026);
    assert_eq!(bx.dims[0].interval.extent, 1024);
}

#[test]
fn count_parses() {
    let p = load("count");
    let f = p.func("count").unwrap();
    assert_eq!(f.stages.len(), 2);
    assert_eq!(f.stages[1].kind, StageKind::Reduction);
    let rd = f.stages[1].rdom.as_ref().unwrap();
    assert_eq!(rd.vars[0].invariants.len(), 1);
    assert_eq!(f.stages[0].ensures().count(), 1);
}

#[test]
fn whole_corpus_parses_and_schedules() {
    for alg in ["blur", "count", "matmul", "conv1d", "chain3", "race"] {
        let p = load(alg);
        let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(alg);
        for ent in fs::read_dir(dir).unwrap() {
            let path = ent.unwrap().path();
            if path.extension().is_some_and(|e| e == "sched") {
                let text = fs::read_to_string(&path).unwrap();
                parse_schedule(&text, &p).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            }
        }
    }
}

#[test]
fn listing5_has_eight_directives() {
    let p = load("blur");
    let d = parse_schedule(&corpus("blur/listing5.sched"), &p).unwrap();
    assert_eq!(d.len(), 8);
    assert!(matches!(&d[1], Directive::Parallel { dim, .. } if dim == "yo"));
    assert!(matches!(&d[5], Directive::ComputeAt { dim, .. } if dim == "yi"));
}

#[test]
fn empty_schedule_is_empty() {
    let p = load("blur");
    assert_eq!(parse_schedule("", &p).unwrap(), vec![]);
}

#[test]
fn unknown_dim_is_reported() {
    let p = load("blur");
    let err = parse_schedule("blur_y.parallel(z);", &p).unwrap_err();
    assert!(matches!(err, ScheduleError::UnknownDim { ref dim, .. } if dim == "z"));
}

#[test]
fn empty_file_errors_at_start() {
    let err = parse_pipeline("").unwrap_err();
    let span = err.span().unwrap();
    assert_eq!((span.line, span.column), (1, 1));
}

#[test]
fn non_canonical_self_reference() {
    let src = "pipeline p(inp[x in 0..4]) -> f[x in 0..4] { f(x) = inp(x); f.ensures(f(x + 1) == inp(x)); }";
    assert!(has_kind(parse_pipeline(src).unwrap_err(), DiagnosticKind::SelfReferenceNotCanonical));
}

#[test]
fn arity_mismatch() {
    let src = "pipeline p(inp[x in 0..4]) -> f[x in 0..4] { f(x) = inp(x, x); }";
    assert!(has_kind(parse_pipeline(src).unwrap_err(), DiagnosticKind::ArityMismatch));
}

#[test]
fn printed_corpus_round_trips() {
    for alg in ["blur", "count", "matmul", "conv1d", "chain3", "race"] {
        let p = load(alg);
        let q = parse_pipeline(&print_pipeline(&p)).unwrap();
        assert_eq!(p.strip_spans(), q.strip_spans(), "{alg}");
    }
}

fn small_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (-20i64..20).prop_map(|v| v.to_string()),
        Just("x".to_string()),
        Just("inp(x)".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), prop::sample::select(vec!["+", "-", "*", "/", "%"]))
                .prop_map(|(a, b, op)| format!("({a} {op} {b})")),
            (inner.clone(), inner.clone(), inner.clone())
                .prop_map(|(c, a, b)| format!("select({c} < 0, {a}, {b})")),
            (inner.clone(), inner).prop_map(|(a, b)| format!("min({a}, {b})")),
        ]
    })
}

proptest! {
    #[test]
    fn generated_pipelines_round_trip(rhs in small_expr(), lo in -3i64..3) {
        let src = format!(
            "pipeline p(inp[x in {lo}..f.x.max]) -> f[x in {lo}..8] {{ f(x) = {rhs}; f.ensures(f(x) == {rhs}); }}"
        );
        let p = parse_pipeline(&src).unwrap();
        let q = parse_pipeline(&print_pipeline(&p)).unwrap();
        prop_assert_eq!(p.strip_spans(), q.strip_spans());
    }

    #[test]
    fn parser_is_total(src in "[a-z0-9(){}\\[\\];:,.=<>+*/%!&| -]{0,80}") {
        let _ = parse_pipeline(&src);
    }

    #[test]
    fn parser_is_total_on_mutated_corpus(cut in 0usize..400, junk in "[(){};.a-z0-9]{0,4}") {
        let text = corpus("count/count.hal");
        let cut = cut.min(text.len());
        let cut = (0..=cut).rev().find(|&i| text.is_char_boundary(i)).unwrap();
        let _ = parse_pipeline(&format!("{}{}{}", &text[..cut], junk, &text[cut..]));
    }
}
