use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use minisched::annotate::lower_annotated;
use minisched::check::{run_lowered, Valuation};
use minisched::corpus::{cap, entries, load_pipeline, load_schedule};
use minisched::emit::{annotation_metrics, emit, emit_with, EmitOptions, EmittedUnit};
use minisched::lower::LoopNest;

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn nest(alg: &str, sched: &str, limit: Option<i64>) -> LoopNest {
    let dir = corpus_dir().join(alg);
    let mut p = load_pipeline(&dir.join(format!("{alg}.hal"))).unwrap();
    if let Some(l) = limit {
        cap(&mut p, l).unwrap();
    }
    let ds = load_schedule(&dir.join(format!("{sched}.sched")), &p).unwrap();
    lower_annotated(&p, &ds).unwrap()
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// The body of the serial loop whose header is `head`, searching from `from`.
fn loop_annotations<'a>(src: &'a str, head: &str, from: usize) -> Vec<&'a str> {
    let at = from + src[from..].find(head).unwrap();
    let open = src[..at].rfind("/*@").unwrap();
    src[open..at].lines().skip(1).filter(|l| l.trim_start().starts_with("loop_invariant")).collect()
}

#[test]
fn listing5_matches_golden() {
    let u = emit(&nest("blur", "listing5", None));
    let golden = corpus_dir().join("blur/listing5.c");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&golden, &u.source).unwrap();
    }
    assert_eq!(squash(&u.source), squash(&fs::read_to_string(golden).unwrap()));
}

#[test]
fn listing5_structure() {
    let u = emit(&nest("blur", "listing5", None));
    let s = &u.source;
    let pragma = s.find("#pragma omp parallel for").unwrap();
    assert!(s[pragma..].trim_start_matches("#pragma omp parallel for").trim_start().starts_with("for (int yo = 0; yo < 128; yo++)"));
    assert!(s.contains("malloc(sizeof(int32_t) * 10240)"));
    assert!(s.contains("free(_blur_x);"));
    assert_eq!((u.loops, u.parallel_loops), (5, 1));

    let consume = s.find("// consume blur_x").unwrap();
    let inv = loop_annotations(s, "for (int xo", consume);
    assert_eq!(inv.len(), 5, "{inv:#?}");
    assert!(inv[0].contains("0 <= xo && xo <= 512"));
    assert!(inv[1].contains("\\forall*") && inv[1].contains("y1<yo * 8 + 10") && inv[1].contains("Perm(&_blur_x[") && inv[1].contains("1\\2"));
    assert!(inv[3].contains("\\forall*") && inv[3].contains("Perm(&_blur_y[") && inv[3].contains("1\\1"));
    assert!(inv[4].contains("0<=xof && xof<xo") && inv[4].contains("_blur_y[") && inv[4].contains("p_i("));

    let body = &s[consume..];
    let body = &body[body.find("for (int xo").unwrap()..body.find("} // for xo").unwrap()];
    assert_eq!(body.matches("_blur_y[").count(), 2);
}

#[test]
fn parts_appear_in_order() {
    let s = emit(&nest("blur", "listing5", None)).source;
    let marks = [
        "pure int hdiv",
        "div_eucl(int32_t x, int32_t y)",
        "struct buffer {",
        "pure int p_i(int x);",
        "context inpb != NULL",
        "\\pointer_length(blur_yb->host) == 1024*1024",
        "blur_yb->dim[1].min == 0 && blur_yb->dim[1].max == 1024",
        "// Pipeline postconditions",
        "int blur(struct buffer *inpb, struct buffer *blur_yb) {",
        "#pragma omp parallel for",
        "malloc(",
        "loop_invariant",
        "free(",
    ];
    let pos: Vec<usize> = marks.iter().map(|m| s.find(m).unwrap_or_else(|| panic!("missing {m}"))).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{pos:?}");
}

#[test]
fn inlined_blur_has_one_nest_and_no_allocation() {
    let u = emit(&nest("blur", "v0", None));
    assert!(!u.source.contains("malloc"));
    assert_eq!((u.loops, u.parallel_loops), (2, 0));
}

#[test]
fn emission_is_deterministic() {
    let n = nest("matmul", "split_unroll", None);
    assert_eq!(emit(&n), emit(&n));
}

#[test]
fn context_expansion() {
    let n = nest("blur", "listing5", None);
    let plain = emit(&n);
    let wide = emit_with(&n, EmitOptions { expand_context: true });
    assert!(!wide.source.contains("context "));
    let contexts = plain.source.matches("\n context ").count() + plain.source.matches("  context ").count();
    assert!(contexts > 0);
    assert!(wide.loa > plain.loa);
}

#[test]
fn annotation_growth() {
    let n = nest("blur", "listing5", None);
    let user = n.pipeline.user_annotation_count();
    let m = annotation_metrics(&emit(&n), user);
    assert!(m.ann_incr >= 5.0, "{m:?}");
    let bare = n.pipeline.without_user_annotations();
    let ds = load_schedule(&corpus_dir().join("blur/listing5.sched"), &bare).unwrap();
    let u = emit(&lower_annotated(&bare, &ds).unwrap());
    let m = annotation_metrics(&u, bare.user_annotation_count());
    assert_eq!(m.user_loa, 0);
    assert!(m.loa > 0);
    assert_eq!(m.ann_incr, m.loa as f64);
}

fn compiler() -> Option<&'static str> {
    ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok())
}

fn harness(u: &EmittedUnit, n: &LoopNest, v: &Valuation) -> String {
    let p = &n.pipeline;
    let mut s = u.source.clone();
    s.push_str("\n#include <stdio.h>\n\nint main(void)\n{\n");
    let mut args = Vec::new();
    let out = p.output_func();
    let params = p.inputs.iter().map(|b| (b.name.as_str(), b.dims.as_slice())).chain([(out.name.as_str(), out.dims.as_slice())]);
    for (name, dims) in params {
        let size: i64 = dims.iter().map(|d| d.interval.extent).product();
        let data: Vec<String> = match v.buffers.get(name) {
            Some(t) => t.data.iter().map(|x| x.unwrap().to_string()).collect(),
            None => vec!["0".into()],
        };
        let _ = writeln!(s, "    static int32_t h_{name}[{size}] = {{{}}};", data.join(", "));
        let ds: Vec<String> = dims.iter().map(|d| format!("{{{}, {}}}", d.interval.min, d.interval.max())).collect();
        let _ = writeln!(s, "    struct halide_dimension_t d_{name}[] = {{{}}};", ds.join(", "));
        let _ = writeln!(s, "    struct buffer b_{name} = {{{}, d_{name}, h_{name}}};", dims.len());
        args.push(format!("&b_{name}"));
    }
    let _ = writeln!(s, "    {}({});", p.name, args.join(", "));
    let _ = writeln!(s, "    for (int i = 0; i < {}; i++) printf(\"%d\\n\", h_{}[i]);", out.domain_size(), out.name);
    s.push_str("    return 0;\n}\n");
    s
}

fn compile_and_run(cc: &str, src: &str, dir: &Path, stem: &str) -> Vec<i64> {
    let c = dir.join(format!("{stem}.c"));
    let bin = dir.join(stem);
    fs::write(&c, src).unwrap();
    let st = Command::new(cc)
        .args(["-std=c11", "-pedantic", "-Wall", "-Wno-unknown-pragmas", "-Werror", "-O1", "-o"])
        .arg(&bin)
        .arg(&c)
        .status()
        .unwrap();
    assert!(st.success(), "{stem} does not compile");
    let out = Command::new(&bin).output().unwrap();
    String::from_utf8(out.stdout).unwrap().lines().map(|l| l.parse().unwrap()).collect()
}

#[test]
fn emitted_c_computes_what_the_interpreter_computes() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let dir = std::env::temp_dir().join(format!("minisched-emit-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    for e in entries(&corpus_dir()).unwrap() {
        for s in &e.schedules {
            let sched = s.file_stem().unwrap().to_string_lossy();
            let n = nest(&e.name, &sched, Some(16));
            let v = Valuation::random(&n.pipeline, 3);
            let want: Vec<i64> = run_lowered(&n, &v).unwrap().data.into_iter().map(Option::unwrap).collect();
            let got = compile_and_run(cc, &harness(&emit(&n), &n, &v), &dir, &format!("{}_{sched}", e.name));
            assert_eq!(got, want, "{}/{sched}", e.name);
        }
    }
    let _ = fs::remove_dir_all(&dir);
}
