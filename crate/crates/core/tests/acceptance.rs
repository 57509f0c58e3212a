//! End-to-end acceptance run. Prints one line per criterion and exits
//! non-zero when any of them fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use minisched::annotate::lower_annotated;
use minisched::check::{check_backend, check_frontend, eval_reference, FindingKind, LoweredProgram, Valuation};
use minisched::corpus::{cap, entries, load_pipeline, load_schedule, Entry};
use minisched::emit::{annotation_metrics, emit};
use minisched::frontend::{check_decreases, encode, print_program};
use minisched::ir::{hdiv, hmod};
use minisched::lower::{Loop, LoopNest, Node};
use minisched::parse::{parse_schedule, Directive};
use minisched::{rescale, BinOp, Expr, Fraction, Pipeline};

type Verdict = Result<String, String>;

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn entry(name: &str) -> Entry {
    entries(&corpus_dir()).unwrap().into_iter().find(|e| e.name == name).unwrap()
}

fn capped(e: &Entry, limit: i64) -> Pipeline {
    let mut p = load_pipeline(&e.pipeline).unwrap();
    cap(&mut p, limit).unwrap();
    p
}

fn nest_for(p: &Pipeline, sched: &Path) -> LoopNest {
    lower_annotated(p, &load_schedule(sched, p).unwrap()).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, limit: Duration) -> Result<(), String> {
    let took = t.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

fn golden_frontend() -> Verdict {
    let t = Instant::now();
    let p = load_pipeline(&entry("count").pipeline).map_err(|e| e.to_string())?;
    let got = print_program(&encode(&p).map_err(|e| e.to_string())?);
    let want = fs::read_to_string(corpus_dir().join("count/count.pvl")).unwrap();
    ensure(got == want, || "encoding differs from count.pvl".into())?;
    for needle in [
        "pure int count1r(int x, int r) = r == 0 ? count0(x) :",
        "requires 0 <= r && r <= 10;",
        "ensures (0 <= \\result && \\result <= r);",
        "decreases r;",
        "pure int count(int x) = count1r(x, 10);",
    ] {
        ensure(got.contains(needle), || format!("missing `{needle}`"))?;
    }
    within(t, Duration::from_secs(1))?;
    Ok(format!("byte-equal in {:.0?}", t.elapsed()))
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn golden_backend() -> Verdict {
    let t = Instant::now();
    let e = entry("blur");
    let p = load_pipeline(&e.pipeline).unwrap();
    let n = nest_for(&p, e.schedule("listing5").unwrap());
    let s = emit(&n).source;
    let golden = fs::read_to_string(corpus_dir().join("blur/listing5.c")).unwrap();
    ensure(squash(&s) == squash(&golden), || "differs from blur/listing5.c".into())?;

    let pragma = s.find("#pragma omp parallel for").ok_or("no parallel loop")?;
    let head = s[pragma..].lines().nth(1).unwrap_or("").trim();
    ensure(head == "for (int yo = 0; yo < 128; yo++)", || format!("parallel loop is `{head}`"))?;
    ensure(s.contains("malloc(sizeof(int32_t) * 10240)"), || "no allocation of 10240".into())?;

    let consume = s.find("// consume blur_x").ok_or("no consume node")?;
    let at = consume + s[consume..].find("for (int xo").ok_or("no consume loop")?;
    let body = &s[at..at + s[at..].find("} // for xo").unwrap()];
    let stores = body.lines().filter(|l| l.trim_start().starts_with("_blur_y[")).count();
    ensure(stores == 2, || format!("{stores} stores per xo iteration"))?;

    let open = s[..at].rfind("/*@").unwrap();
    let inv: Vec<&str> = s[open..at].lines().filter(|l| l.contains("loop_invariant")).collect();
    let family = |pred: &dyn Fn(&str) -> bool| inv.iter().any(|l| pred(l));
    ensure(family(&|l| l.contains("0 <= xo && xo <= 512")), || "bounds invariant".into())?;
    ensure(
        family(&|l| l.contains("\\forall*") && l.contains("Perm(&_blur_x[") && l.contains("y1<yo * 8 + 10") && l.contains("1\\2")),
        || "blur_x read permissions over 10 rows".into(),
    )?;
    ensure(family(&|l| l.contains("\\forall*") && l.contains("Perm(&_blur_y[") && l.contains("1\\1")), || {
        "blur_y write permissions".into()
    })?;
    ensure(family(&|l| l.contains("0<=xof && xof<xo") && l.contains("_blur_y[") && l.contains("hdiv(")), || {
        "partial ensures over xof<xo".into()
    })?;
    within(t, Duration::from_secs(2))?;
    Ok(format!("structure matches in {:.0?}", t.elapsed()))
}

const ALGORITHMS: [&str; 5] = ["blur", "count", "matmul", "conv1d", "chain3"];

fn directive_kind(d: &Directive) -> &'static str {
    match d {
        Directive::Split { .. } => "split",
        Directive::Fuse { .. } => "fuse",
        Directive::Reorder { .. } => "reorder",
        Directive::Parallel { .. } => "parallel",
        Directive::Unroll { .. } => "unroll",
        Directive::ComputeAt { .. } => "compute_at",
        Directive::StoreAt { .. } => "store_at",
    }
}

fn oracle_equivalence() -> Verdict {
    let t = Instant::now();
    let results: Vec<Result<(usize, BTreeSet<&'static str>), String>> = thread::scope(|sc| {
        let handles: Vec<_> = ALGORITHMS
            .iter()
            .map(|alg| {
                sc.spawn(move || {
                    let e = entry(alg);
                    let p = capped(&e, 64);
                    ensure(e.schedules.len() >= 4, || format!("{alg} has only {} schedules", e.schedules.len()))?;
                    let mut kinds = BTreeSet::new();
                    let mut runs = 0;
                    for s in &e.schedules {
                        let ds = load_schedule(s, &p).unwrap();
                        kinds.extend(ds.iter().map(directive_kind));
                        let n = lower_annotated(&p, &ds).unwrap();
                        let mut prog = LoweredProgram::new(&n).map_err(|f| f.message)?;
                        for seed in 0..20 {
                            let v = Valuation::random(&p, seed);
                            let want = eval_reference(&p, &v).map_err(|f| f.message)?;
                            let got = prog.run(&v).map_err(|f| f.message)?;
                            let label = format!("{alg}/{} seed {seed}", s.display());
                            ensure(got == want, || format!("{label}: output differs from the reference"))?;
                            let r = prog.check(&v);
                            ensure(r.passed(), || format!("{label}: {:?}", r.findings))?;
                            runs += 1;
                        }
                    }
                    Ok((runs, kinds))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut runs = 0;
    let mut kinds = BTreeSet::new();
    for r in results {
        let (n, k) = r?;
        runs += n;
        kinds.extend(k);
    }
    ensure(kinds.len() == 7, || format!("directives covered: {kinds:?}"))?;
    within(t, Duration::from_secs(120))?;
    Ok(format!("{runs} runs, all 7 directives, {:.1?}", t.elapsed()))
}

fn memory_safety_without_annotations() -> Verdict {
    let mut pairs = 0;
    for e in entries(&corpus_dir()).unwrap() {
        let p = capped(&e, 64).without_user_annotations();
        for s in &e.schedules {
            // The seeded fault corpus is covered by the mutation suite.
            if e.name == "race" && s.ends_with("bad.sched") {
                continue;
            }
            let n = nest_for(&p, s);
            for seed in 0..3 {
                let r = check_backend(&n, &Valuation::random(&p, seed));
                ensure(r.findings.is_empty(), || format!("{}/{}: {:?}", e.name, s.display(), r.findings))?;
            }
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs, 0 findings"))
}

/// Applies `f` to every node list of the nest, outermost first.
fn edit_lists(nodes: &mut Vec<Node>, f: &mut dyn FnMut(&mut Vec<Node>)) {
    f(nodes);
    for n in nodes.iter_mut() {
        match n {
            Node::Loop(l) => edit_lists(&mut l.body, f),
            Node::Produce { body, .. } | Node::Consume { body, .. } | Node::Store { body, .. } | Node::If { body, .. } => {
                edit_lists(body, f)
            }
            Node::Assign(_) => {}
        }
    }
}

fn edit_loops(nodes: &mut Vec<Node>, f: &mut dyn FnMut(&mut Loop)) {
    edit_lists(nodes, &mut |list| {
        for n in list.iter_mut() {
            if let Node::Loop(l) = n {
                f(l);
            }
        }
    });
}

struct Fault {
    name: &'static str,
    expect: FindingKind,
    nest: LoopNest,
}

fn with_directive(alg: &str, base: &str, extra: &str, limit: i64) -> LoopNest {
    let e = entry(alg);
    let p = capped(&e, limit);
    let text = fs::read_to_string(e.schedule(base).unwrap()).unwrap() + extra;
    lower_annotated(&p, &parse_schedule(&text, &p).unwrap()).unwrap()
}

fn corpus_nest(alg: &str, sched: &str, limit: i64) -> LoopNest {
    let e = entry(alg);
    nest_for(&capped(&e, limit), e.schedule(sched).unwrap())
}

fn truncating(e: &Expr) -> Expr {
    e.rewrite(&mut |x| match x {
        Expr::Bin(BinOp::Div, a, b) => Some(Expr::bin(BinOp::TruncDiv, truncating(a), truncating(b))),
        _ => None,
    })
}

fn faults() -> Vec<Fault> {
    let mut out = Vec::new();
    let mut push = |name, expect, nest| out.push(Fault { name, expect, nest });

    push("race: parallel reduction (corpus)", FindingKind::Race, corpus_nest("race", "bad", 16));
    push("race: count parallel over r", FindingKind::Race, with_directive("count", "default", "count.parallel(r);", 16));
    push("race: matmul parallel over kx", FindingKind::Race, with_directive("matmul", "default", "C.parallel(kx);", 8));
    push("race: conv1d parallel over r", FindingKind::Race, with_directive("conv1d", "default", "out.parallel(r);", 16));

    // A split that does not divide the extent needs its tail guard.
    let mut p = load_pipeline(&entry("blur").pipeline).unwrap();
    rescale(&mut p, &[("x".into(), 10), ("y".into(), 6)]).unwrap();
    let mut n = lower_annotated(&p, &parse_schedule("blur_y.split(x, xo, xi, 4);", &p).unwrap()).unwrap();
    let mut removed = 0;
    edit_lists(&mut n.body, &mut |list| {
        let mut i = 0;
        while i < list.len() {
            if let Node::If { body, .. } = &list[i] {
                let body = body.clone();
                removed += 1;
                list.splice(i..i + 1, body);
            }
            i += 1;
        }
    });
    assert!(removed > 0, "no guard to remove");
    push("split guard removed", FindingKind::OutOfBounds, n);

    let mut n = corpus_nest("blur", "listing5", 16);
    edit_lists(&mut n.body, &mut |list| {
        for node in list.iter_mut() {
            if let Node::Store { alloc, .. } = node {
                let last = alloc.extents.len() - 1;
                alloc.extents[last] -= 1;
                alloc.size = alloc.extents.iter().product();
            }
        }
    });
    push("store footprint shrunk by one row", FindingKind::OutOfBounds, n);

    let mut n = corpus_nest("blur", "listing5", 16);
    edit_loops(&mut n.body, &mut |l| {
        if l.dim.name == "y" && l.stage.func == "blur_x" {
            l.dim.extent -= 1;
        }
    });
    push("produced footprint shrunk by one row", FindingKind::UninitializedRead, n);

    let mut n = corpus_nest("blur", "listing5", 16);
    edit_loops(&mut n.body, &mut |l| {
        if l.dim.name == "xo" && l.stage.func == "blur_y" {
            l.annotations.invariants = l
                .annotations
                .invariants
                .iter()
                .map(|e| {
                    e.rewrite(&mut |x| match x {
                        Expr::Perm { location, fraction } if location.loaded_arrays().contains("blur_y") => {
                            Some(Expr::Perm { location: location.clone(), fraction: *fraction / Fraction::from(2) })
                        }
                        _ => None,
                    })
                })
                .collect();
        }
    });
    push("invariant weakened: half the write permission", FindingKind::PermissionMissing, n);

    let mut n = corpus_nest("blur", "listing5", 16);
    edit_loops(&mut n.body, &mut |l| {
        if l.dim.name == "xo" && l.stage.func == "blur_y" {
            l.annotations.invariants.retain(|e| !(e.contains_perm() && e.loaded_arrays().contains("blur_x")));
        }
    });
    push("invariant weakened: read permission dropped", FindingKind::PermissionMissing, n);

    for sched in ["v0", "listing5"] {
        let mut n = corpus_nest("blur", sched, 16);
        edit_lists(&mut n.body, &mut |list| {
            for node in list.iter_mut() {
                if let Node::Assign(a) = node {
                    a.value = truncating(&a.value);
                }
            }
        });
        let name = if sched == "v0" { "truncating division (inlined)" } else { "truncating division (tiled)" };
        push(name, FindingKind::InvariantViolation, n);
    }

    let mut n = corpus_nest("blur", "listing5", 16);
    edit_lists(&mut n.body, &mut |list| {
        let p = list.iter().position(|x| matches!(x, Node::Produce { func, .. } if func == "blur_x"));
        let c = list.iter().position(|x| matches!(x, Node::Consume { func, .. } if func == "blur_x"));
        if let (Some(p), Some(c)) = (p, c) {
            list.swap(p, c);
        }
    });
    push("consume before produce", FindingKind::UninitializedRead, n);
    out
}

fn mutation_suite() -> Verdict {
    let faults = faults();
    let mut killed = 0;
    let mut misses = Vec::new();
    for f in &faults {
        // Truncating division only differs on negative operands.
        let v = (0..)
            .map(|seed| Valuation::random(&f.nest.pipeline, seed))
            .find(|v| v.buffers.values().any(|t| t.data.iter().any(|x| x.is_some_and(|x| x < 0))))
            .unwrap();
        let r = check_backend(&f.nest, &v);
        let kinds: Vec<FindingKind> = r.findings.iter().map(|x| x.kind).collect();
        if !r.passed() && r.has(f.expect) {
            killed += 1;
        } else {
            misses.push(format!("{}: expected {:?}, got {kinds:?}", f.name, f.expect));
        }
    }
    ensure(faults.len() >= 10 && misses.is_empty(), || format!("{killed}/{} killed; {}", faults.len(), misses.join("; ")))?;
    Ok(format!("{killed}/{} faults killed with the expected kind", faults.len()))
}

fn hdiv_algebra() -> Verdict {
    let t = Instant::now();
    for x in -1000i64..=1000 {
        for y in -1000i64..=1000 {
            let (q, r) = (hdiv(x, y), hmod(x, y));
            let ok = if y == 0 { q == 0 && r == 0 } else { x == y * q + r && 0 <= r && r < y.abs() };
            ensure(ok, || format!("x={x} y={y}: q={q} r={r}"))?;
        }
    }
    within(t, Duration::from_secs(1))?;
    Ok(format!("2001^2 pairs in {:.0?}", t.elapsed()))
}

fn annotation_growth() -> Verdict {
    let e = entry("blur");
    let p = load_pipeline(&e.pipeline).unwrap();
    let sched = e.schedule("listing5").unwrap();
    let m = annotation_metrics(&emit(&nest_for(&p, sched)), p.user_annotation_count());
    ensure(m.ann_incr >= 5.0, || format!("LoA {} / user {} < 5", m.loa, m.user_loa))?;
    let bare = p.without_user_annotations();
    let z = annotation_metrics(&emit(&nest_for(&bare, sched)), bare.user_annotation_count());
    ensure(z.user_loa == 0 && z.loa > 0, || format!("without user annotations: {z:?}"))?;
    Ok(format!("LoA {} / user {} = {:.1}; {} generated with none", m.loa, m.user_loa, m.ann_incr, z.loa))
}

fn frontend_fidelity() -> Verdict {
    let t = Instant::now();
    let mut decls = 0;
    for alg in ALGORITHMS {
        let p = capped(&entry(alg), 16);
        let enc = encode(&p).map_err(|e| e.to_string())?;
        for d in enc.declarations.iter().filter(|d| d.is_recursive()) {
            check_decreases(d).map_err(|m| format!("{alg}: {m}"))?;
            decls += 1;
        }
        for seed in 0..5 {
            let r = check_frontend(&enc, &p, &Valuation::random(&p, seed));
            ensure(r.passed(), || format!("{alg} seed {seed}: {:?}", r.findings))?;
        }
    }
    within(t, Duration::from_secs(10))?;
    Ok(format!("5 algorithms, {decls} recursive decls, {:.0?}", t.elapsed()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("1 golden front-end", golden_frontend),
        ("2 golden back-end", golden_backend),
        ("3 oracle equivalence", oracle_equivalence),
        ("4 memory safety without user annotations", memory_safety_without_annotations),
        ("5 mutation suite", mutation_suite),
        ("6 hdiv algebra", hdiv_algebra),
        ("7 annotation growth", annotation_growth),
        ("8 front-end fidelity", frontend_fidelity),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{}/8 criteria pass", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
