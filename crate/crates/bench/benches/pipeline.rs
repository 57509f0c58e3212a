use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use minisched::annotate::lower_annotated;
use minisched::check::{check_annotations, eval_reference, LoweredProgram, Valuation};
use minisched::emit::emit;
use minisched::frontend::encode;
use minisched::ir::{hdiv, hmod};
use minisched_bench::{nest, pipeline, schedule};

fn front_end(c: &mut Criterion) {
    let p = pipeline("count", None);
    c.bench_function("encode count", |b| b.iter(|| encode(black_box(&p)).unwrap()));
}

fn lowering(c: &mut Criterion) {
    let p = pipeline("blur", None);
    let ds = schedule("blur", "listing5", &p);
    c.bench_function("lower+annotate blur listing5 1024", |b| b.iter(|| lower_annotated(black_box(&p), &ds).unwrap()));
    let (_, n) = nest("blur", "listing5", None);
    c.bench_function("emit blur listing5 1024", |b| b.iter(|| emit(black_box(&n))));
}

fn checking(c: &mut Criterion) {
    let mut g = c.benchmark_group("check blur 32");
    g.sample_size(20);
    for sched in ["v0", "fused", "listing5", "tiled"] {
        let (p, n) = nest("blur", sched, Some(32));
        let v = Valuation::random(&p, 0);
        g.bench_with_input(BenchmarkId::new("fresh", sched), &n, |b, n| b.iter(|| check_annotations(n, &v)));
        let mut prog = LoweredProgram::new(&n).unwrap();
        g.bench_with_input(BenchmarkId::new("cached", sched), &v, |b, v| b.iter(|| prog.check(v)));
        g.bench_with_input(BenchmarkId::new("run", sched), &v, |b, v| b.iter(|| prog.run(v).unwrap()));
    }
    let (p, _) = nest("blur", "v0", Some(32));
    let v = Valuation::random(&p, 0);
    g.bench_function("reference", |b| b.iter(|| eval_reference(&p, &v).unwrap()));
    g.finish();
}

fn division(c: &mut Criterion) {
    c.bench_function("hdiv/hmod 201x201", |b| {
        b.iter(|| {
            let mut acc = 0i64;
            for x in -100..=100 {
                for y in -100..=100 {
                    acc = acc.wrapping_add(hdiv(black_box(x), y) ^ hmod(x, y));
                }
            }
            acc
        })
    });
}

criterion_group!(benches, front_end, lowering, checking, division);
criterion_main!(benches);
