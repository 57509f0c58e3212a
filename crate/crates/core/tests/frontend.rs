use std::fs;
use std::path::PathBuf;

use minisched::check::{check_frontend, FindingKind, Valuation};
use minisched::frontend::{check_decreases, encode, print_program};
use minisched::parse::parse_pipeline_named;
use minisched::{rescale, Pipeline};

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn load(alg: &str, cap: i64) -> Pipeline {
    let text = fs::read_to_string(corpus_dir().join(format!("{alg}/{alg}.hal"))).unwrap();
    let mut p = parse_pipeline_named(alg, &text).unwrap();
    let dims: Vec<(String, i64)> =
        p.output_func().dims.iter().map(|d| (d.name.clone(), d.interval.extent.min(cap))).collect();
    rescale(&mut p, &dims).unwrap();
    p
}

#[test]
fn count_matches_golden() {
    let text = fs::read_to_string(corpus_dir().join("count/count.hal")).unwrap();
    let p = parse_pipeline_named("count", &text).unwrap();
    let got = print_program(&encode(&p).unwrap());
    let want = fs::read_to_string(corpus_dir().join("count/count.pvl")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn corpus_encodings_check() {
    for alg in ["blur", "count", "matmul", "conv1d", "chain3"] {
        let p = load(alg, 16);
        let e = encode(&p).unwrap();
        for d in e.declarations.iter().filter(|d| d.is_recursive()) {
            check_decreases(d).unwrap();
        }
        for seed in 0..3 {
            let r = check_frontend(&e, &p, &Valuation::random(&p, seed));
            assert!(r.passed(), "{alg} seed {seed}: {:?}", r.findings);
        }
    }
}

#[test]
fn encoding_is_deterministic() {
    let p = load("matmul", 16);
    assert_eq!(print_program(&encode(&p).unwrap()), print_program(&encode(&p).unwrap()));
}

#[test]
fn wrong_blur_postcondition_is_reported() {
    let text = fs::read_to_string(corpus_dir().join("blur/blur.hal")).unwrap();
    let text = text.replacen("inp(x + 2, y + 2)) / 3) / 3;", "inp(x + 2, y + 2)) / 3) / 2;", 1);
    let mut p = parse_pipeline_named("blur", &text).unwrap();
    rescale(&mut p, &[("x".into(), 8), ("y".into(), 8)]).unwrap();
    let r = check_frontend(&encode(&p).unwrap(), &p, &Valuation::random(&p, 3));
    assert!(r.has(FindingKind::InvariantViolation));
}

#[test]
fn two_variable_reduction_matches_reference_on_small_domains() {
    let src = "pipeline box(inp[x in 0..s.x.max + 2, y in 0..s.y.max + 3]) -> s[x in 0..4, y in 0..4] {
        rdom rx in 0..3, ry in 0..4;
        s(x, y) = 0;
        s(x, y) = s(x, y) + inp(x + rx, y + ry);
        s.invariant(rx, -100 * (3 * ry + rx) <= s(x, y) <= 100 * (3 * ry + rx));
        s.invariant(ry, -300 * ry <= s(x, y) <= 300 * ry);
    }";
    let p = minisched::parse::parse_pipeline(src).unwrap();
    let e = encode(&p).unwrap();
    for seed in 0..4 {
        let r = check_frontend(&e, &p, &Valuation::random(&p, seed));
        assert!(r.passed(), "{:?}", r.findings);
    }
}

#[test]
fn three_variable_reduction_matches_reference() {
    let src = "pipeline cube(inp[x in 0..2, y in 0..3, z in 0..2]) -> s[i in 0..2] {
        rdom a in 0..2, b in 0..3, c in 0..2;
        s(i) = i;
        s(i) = s(i) * 2 + inp(a, b, c);
        s.invariant(a, true);
        s.invariant(b, true);
        s.invariant(c, true);
    }";
    let p = minisched::parse::parse_pipeline(src).unwrap();
    let e = encode(&p).unwrap();
    let v = Valuation::from_fn(&p, |_, pt| pt[0] + 2 * pt[1] - pt[2]);
    let r = check_frontend(&e, &p, &v);
    assert!(r.passed(), "{:?}", r.findings);
}
