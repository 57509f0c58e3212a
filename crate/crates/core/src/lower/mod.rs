//! Scheduling: directive application, bounds inference and construction of
//! the imperative loop nest.

mod affine;
mod bounds;
mod nest;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::check::stage_loops;
use crate::eval::{compile, Code, Host, Machine, Resolver, Scope};
use crate::ir::{Bound, Expr, Func, Pipeline, Stage};
use crate::parse::Directive;

pub use affine::Lin;
pub use bounds::{infer_bounds, FuncBounds, Footprints, Span};
pub(crate) use bounds::widen;
pub(crate) use nest::flatten_with;
pub use nest::{build_loop_nest, count_loops, lower, Assign, FlatAlloc, Loop, LoopNest, Node, StageRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopKind {
    Serial,
    Parallel,
    Unrolled,
}

impl fmt::Display for LoopKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopKind::Serial => "for",
            LoopKind::Parallel => "parallel",
            LoopKind::Unrolled => "unrolled",
        })
    }
}

/// One loop of a stage after scheduling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopDim {
    /// Loop variable as it appears in the nest.
    pub name: String,
    /// Dotted derivation path, e.g. `y.yo`.
    pub path: String,
    pub min: Expr,
    pub extent: i64,
    pub kind: LoopKind,
    /// Reduction variables walked by this loop.
    pub rvars: Vec<String>,
}

impl LoopDim {
    pub fn max(&self) -> Expr {
        Expr::add(self.min.clone(), Expr::Const(self.extent))
    }

    pub fn is_reduction(&self) -> bool {
        !self.rvars.is_empty()
    }
}

/// Loops of one stage, outermost first, and how the algorithm's variables
/// are recovered from them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSchedule {
    pub dims: Vec<LoopDim>,
    /// Original variable to an expression over the loop variables.
    pub origins: Vec<(String, Expr)>,
    /// Tail guards of splits whose factor does not divide the extent.
    pub guards: Vec<Expr>,
}

impl StageSchedule {
    pub fn origin_map(&self) -> HashMap<String, Expr> {
        self.origins.iter().cloned().collect()
    }

    pub fn dim(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Placement {
    Inline,
    Root,
    At { func: String, dim: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuncSchedule {
    pub name: String,
    /// Loop directives (split, fuse, reorder, parallel, unroll) in order.
    pub directives: Vec<Directive>,
    pub compute: Placement,
    pub store: Placement,
    /// Loops of every stage over the full realized domain.
    pub stages: Vec<StageSchedule>,
}

/// A pipeline with inlined functions substituted away and a schedule for
/// every remaining function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduledPipeline {
    /// The pipeline after inlining; `funcs` lines up with `pipeline.funcs`.
    pub pipeline: Pipeline,
    pub funcs: Vec<FuncSchedule>,
    pub inlined: Vec<String>,
}

impl ScheduledPipeline {
    pub fn func(&self, name: &str) -> Option<&FuncSchedule> {
        self.funcs.iter().find(|f| f.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LowerError {
    #[error("`{func}`: split of `{dim}` by non-positive factor {factor}")]
    SplitNonPositiveFactor { func: String, dim: String, factor: i64 },
    #[error("`{func}`: cannot fuse {inner_kind} loop `{inner}` with {outer_kind} loop `{outer}`")]
    FuseKindMismatch { func: String, inner: String, outer: String, inner_kind: LoopKind, outer_kind: LoopKind },
    #[error("placement cycle through `{0}`")]
    PlacementCycle(String),
    #[error("`{func}`: {reason}")]
    InvalidPlacement { func: String, reason: String },
    #[error("`{func}`: schedule changes the order in which its reduction is applied")]
    ReorderUnsafe { func: String },
    #[error("`{func}` has no loop `{dim}`")]
    UnknownDim { func: String, dim: String },
}

fn err_place(func: &str, reason: impl Into<String>) -> LowerError {
    LowerError::InvalidPlacement { func: func.to_string(), reason: reason.into() }
}

/// Base interval of a pure variable: its first value and extent.
pub type Base = (Expr, i64);

/// Default loops of a stage: bare pure variables (last dimension outermost)
/// then reduction variables, innermost last.
fn initial_loops(f: &Func, s: &Stage, base: &HashMap<String, Base>) -> StageSchedule {
    let mut dims = Vec::new();
    let mut origins = Vec::new();
    for (name, iv) in stage_loops(f, s) {
        let is_r = s.rdom.as_ref().is_some_and(|r| r.contains(&name));
        let (min, extent) = match (is_r, base.get(&name)) {
            (false, Some((m, e))) => (m.clone(), *e),
            _ => (Expr::Const(iv.min), iv.extent),
        };
        dims.push(LoopDim {
            name: name.clone(),
            path: name.clone(),
            min,
            extent,
            kind: LoopKind::Serial,
            rvars: if is_r { vec![name.clone()] } else { vec![] },
        });
        origins.push((name.clone(), Expr::Var(name)));
    }
    StageSchedule { dims, origins, guards: Vec::new() }
}

fn substitute_loop(st: &mut StageSchedule, name: &str, e: &Expr) {
    for (_, o) in st.origins.iter_mut() {
        *o = o.substitute(name, e);
    }
    for g in st.guards.iter_mut() {
        *g = g.substitute(name, e);
    }
}

/// Whether every loop a directive names exists in the stage.
fn applies(d: &Directive, st: &StageSchedule) -> bool {
    let has = |n: &str| st.dim(n).is_some();
    match d {
        Directive::Split { old, .. } => has(old),
        Directive::Fuse { inner, outer, .. } => has(inner) && has(outer),
        Directive::Reorder { dims, .. } => dims.iter().all(|n| has(n)),
        Directive::Parallel { dim, .. } | Directive::Unroll { dim, .. } => has(dim),
        Directive::ComputeAt { .. } | Directive::StoreAt { .. } => false,
    }
}

fn apply_one(func: &str, st: &mut StageSchedule, d: &Directive) -> Result<(), LowerError> {
    match d {
        Directive::Split { old, outer, inner, factor, .. } => {
            if *factor <= 0 {
                return Err(LowerError::SplitNonPositiveFactor {
                    func: func.to_string(),
                    dim: old.clone(),
                    factor: *factor,
                });
            }
            let pos = st.dim(old).expect("checked by applies");
            let d = st.dims[pos].clone();
            let n_outer = (d.extent + factor - 1) / factor;
            let o = LoopDim {
                name: outer.clone(),
                path: format!("{}.{}", d.path, outer),
                min: Expr::Const(0),
                extent: n_outer,
                kind: d.kind,
                rvars: d.rvars.clone(),
            };
            let i = LoopDim {
                name: inner.clone(),
                path: format!("{}.{}", d.path, inner),
                min: Expr::Const(0),
                extent: *factor,
                kind: LoopKind::Serial,
                rvars: d.rvars.clone(),
            };
            let point = Expr::add(
                Expr::add(Expr::mul(Expr::Var(outer.clone()), Expr::Const(*factor)), Expr::Var(inner.clone())),
                d.min.clone(),
            );
            substitute_loop(st, old, &point);
            if d.extent % factor != 0 {
                st.guards.push(Expr::lt(point, d.max()));
            }
            st.dims.splice(pos..=pos, [o, i]);
        }
        Directive::Fuse { inner, outer, fused, .. } => {
            let (ip, op) = (st.dim(inner).unwrap(), st.dim(outer).unwrap());
            let (a, b) = (st.dims[ip].clone(), st.dims[op].clone());
            if a.kind != b.kind {
                return Err(LowerError::FuseKindMismatch {
                    func: func.to_string(),
                    inner: inner.clone(),
                    outer: outer.clone(),
                    inner_kind: a.kind,
                    outer_kind: b.kind,
                });
            }
            let f = Expr::Var(fused.clone());
            let ea = Expr::Const(a.extent);
            let a_of = Expr::add(Expr::rem(f.clone(), ea.clone()), a.min.clone());
            let b_of = Expr::add(Expr::div(f, ea), b.min.clone());
            let mut map = HashMap::new();
            map.insert(inner.clone(), a_of);
            map.insert(outer.clone(), b_of);
            for (_, o) in st.origins.iter_mut() {
                *o = o.substitute_all(&map);
            }
            for g in st.guards.iter_mut() {
                *g = g.substitute_all(&map);
            }
            let mut rvars = b.rvars.clone();
            rvars.extend(a.rvars.iter().cloned());
            st.dims[op] = LoopDim {
                name: fused.clone(),
                path: fused.clone(),
                min: Expr::Const(0),
                extent: a.extent * b.extent,
                kind: a.kind,
                rvars,
            };
            st.dims.remove(ip);
        }
        Directive::Reorder { dims, .. } => {
            let mut pos: Vec<usize> = dims.iter().map(|n| st.dim(n).unwrap()).collect();
            let moved: Vec<LoopDim> = dims.iter().rev().map(|n| st.dims[st.dim(n).unwrap()].clone()).collect();
            pos.sort_unstable();
            for (p, d) in pos.into_iter().zip(moved) {
                st.dims[p] = d;
            }
        }
        Directive::Parallel { dim, .. } => {
            let p = st.dim(dim).unwrap();
            st.dims[p].kind = LoopKind::Parallel;
        }
        Directive::Unroll { dim, .. } => {
            let p = st.dim(dim).unwrap();
            st.dims[p].kind = LoopKind::Unrolled;
        }
        Directive::ComputeAt { .. } | Directive::StoreAt { .. } => {}
    }
    Ok(())
}

/// Replays a function's loop directives on one stage whose pure variables
/// start from `base`.
pub fn schedule_stage(
    f: &Func,
    si: usize,
    base: &HashMap<String, Base>,
    ds: &[Directive],
) -> Result<StageSchedule, LowerError> {
    let s = &f.stages[si];
    let mut st = initial_loops(f, s, base);
    for d in ds {
        if applies(d, &st) {
            apply_one(&f.name, &mut st, d)?;
        }
    }
    if s.rdom.is_some() {
        check_reduction_order(f, s, &st)?;
    }
    Ok(st)
}

struct NoLeaves;

impl Resolver for NoLeaves {
    fn leaf(&mut self, _: &Expr) -> Option<u32> {
        None
    }

    fn bound(&self, _: &str, _: &str, _: Bound) -> Option<i64> {
        None
    }
}

impl Host for NoLeaves {
    fn access(&mut self, _: u32, _: &[i64]) -> Result<i64, crate::eval::EvalError> {
        Ok(0)
    }
}

/// Enumerates the stage's iteration space and checks that, for every pure
/// point, the reduction variables advance in lexicographic order with the
/// first variable fastest.
fn check_reduction_order(f: &Func, s: &Stage, st: &StageSchedule) -> Result<(), LowerError> {
    let rd = s.rdom.as_ref().unwrap();
    let unsafe_ = || LowerError::ReorderUnsafe { func: f.name.clone() };
    let mut scope = Scope::new(st.dims.iter().map(|d| d.name.clone()));
    let origins = st.origin_map();
    // Symbolic mins are irrelevant to the order; pin them to zero.
    let loops: Vec<&str> = st.dims.iter().map(|d| d.name.as_str()).collect();
    let comp = |e: &Expr, scope: &mut Scope| {
        let pin: HashMap<String, Expr> =
            e.free_vars().into_iter().filter(|v| !loops.contains(&v.as_str())).map(|v| (v, Expr::Const(0))).collect();
        compile(&e.substitute_all(&pin), scope, &mut NoLeaves).map_err(|_| unsafe_())
    };
    let mins: Vec<i64> = st.dims.iter().map(|d| d.min.as_const().unwrap_or(0)).collect();
    let pure: Vec<Code> = f
        .dims
        .iter()
        .filter_map(|d| origins.get(&d.name))
        .map(|e| comp(e, &mut scope))
        .collect::<Result<_, _>>()?;
    let rv: Vec<Code> = rd
        .vars
        .iter()
        .rev()
        .map(|v| comp(origins.get(&v.name).unwrap_or(&Expr::Var(v.name.clone())), &mut scope))
        .collect::<Result<_, _>>()?;
    let guards: Vec<Code> = st.guards.iter().map(|g| comp(g, &mut scope)).collect::<Result<_, _>>()?;
    let total: i64 = st.dims.iter().map(|d| d.extent.max(0)).product();
    if total > 4_000_000 {
        return Ok(());
    }
    let mut last: HashMap<Vec<i64>, Vec<i64>> = HashMap::new();
    let n = st.dims.len();
    let mut idx = vec![0i64; n];
    for _ in 0..total {
        let slots: Vec<i64> = idx.iter().zip(&mins).map(|(i, m)| i + m).collect();
        let mut m = Machine::with_slots(slots);
        let mut ok = true;
        for g in &guards {
            ok &= m.truth(g, &mut NoLeaves).unwrap_or(false);
        }
        if ok {
            let p: Vec<i64> = pure.iter().map(|c| m.run(c, &mut NoLeaves).unwrap_or(0)).collect();
            let r: Vec<i64> = rv.iter().map(|c| m.run(c, &mut NoLeaves).unwrap_or(0)).collect();
            if let Some(prev) = last.get(&p) {
                if r <= *prev {
                    return Err(unsafe_());
                }
            }
            last.insert(p, r);
        }
        // Odometer over the loops, innermost fastest.
        for k in (0..n).rev() {
            idx[k] += 1;
            if idx[k] < st.dims[k].extent {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(())
}

/// Substitutes the definition of the pure function `f` into `e`.
fn inline_into(e: &Expr, f: &Func) -> Expr {
    let body = &f.stages[0].rhs;
    e.rewrite(&mut |x| match x {
        Expr::Func { name, args } if *name == f.name => {
            let args: Vec<Expr> = args.iter().map(|a| inline_into(a, f)).collect();
            let map = f.dims.iter().map(|d| d.name.clone()).zip(args).collect();
            Some(body.substitute_all(&map))
        }
        Expr::BoundRef { entity, dim, bound } if *entity == f.name => {
            let d = f.dim(dim)?;
            Some(Expr::Const(match bound {
                Bound::Min => d.interval.min,
                Bound::Max => d.interval.max(),
            }))
        }
        _ => None,
    })
}

fn inline_pipeline(p: &mut Pipeline, f: &Func) {
    let fix = |e: &mut Expr| *e = inline_into(e, f);
    for a in p.requires.iter_mut().chain(p.ensures.iter_mut()) {
        fix(&mut a.body);
    }
    for g in p.funcs.iter_mut() {
        for s in g.stages.iter_mut() {
            fix(&mut s.rhs);
            s.lhs.iter_mut().for_each(fix);
            if let Some(gd) = &mut s.guard {
                fix(gd);
            }
            for a in s.annotations.iter_mut() {
                fix(&mut a.body);
            }
            if let Some(rd) = &mut s.rdom {
                for v in rd.vars.iter_mut() {
                    for a in v.invariants.iter_mut() {
                        fix(&mut a.body);
                    }
                }
            }
        }
    }
    p.funcs.retain(|g| g.name != f.name);
}

/// Stages of the pipeline that read `f`, as (function, stage) indices.
pub(crate) fn readers(p: &Pipeline, f: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (gi, g) in p.funcs.iter().enumerate() {
        for (si, s) in g.stages.iter().enumerate() {
            if g.name == f {
                continue;
            }
            let mut hit = false;
            let mut look = |e: &Expr| {
                e.walk(&mut |x| {
                    if matches!(x, Expr::Func { name, .. } if name == f) {
                        hit = true;
                    }
                })
            };
            look(&s.rhs);
            if let Some(gd) = &s.guard {
                look(gd);
            }
            if hit {
                out.push((gi, si));
            }
        }
    }
    out
}

/// Applies a schedule: resolves placements, inlines unscheduled pure
/// functions and derives every stage's loops over its full domain.
pub fn apply_directives(p: &Pipeline, ds: &[Directive]) -> Result<ScheduledPipeline, LowerError> {
    let mut compute: HashMap<String, Placement> = HashMap::new();
    let mut store: HashMap<String, Placement> = HashMap::new();
    let mut loop_ds: HashMap<String, Vec<Directive>> = HashMap::new();
    for d in ds {
        match d {
            Directive::ComputeAt { producer, consumer, dim } => {
                compute.insert(producer.clone(), Placement::At { func: consumer.clone(), dim: dim.clone() });
            }
            Directive::StoreAt { producer, consumer, dim } => {
                store.insert(producer.clone(), Placement::At { func: consumer.clone(), dim: dim.clone() });
            }
            other => loop_ds.entry(other.func().to_string()).or_default().push(other.clone()),
        }
    }
    let mut q = p.clone();
    let mut inlined = Vec::new();
    for f in &p.funcs {
        let scheduled = compute.contains_key(&f.name) || store.contains_key(&f.name) || loop_ds.contains_key(&f.name);
        if f.name != p.output && f.is_pure() && !scheduled {
            let cur = q.func(&f.name).unwrap().clone();
            inline_pipeline(&mut q, &cur);
            inlined.push(f.name.clone());
        }
    }
    for (producer, place) in compute.iter().chain(store.iter()) {
        if let Placement::At { func, .. } = place {
            if inlined.contains(func) {
                return Err(err_place(producer, format!("`{func}` is inlined and has no loops")));
            }
        }
    }
    let mut funcs = Vec::new();
    for f in &q.funcs {
        let root = |m: &HashMap<String, Placement>| m.get(&f.name).cloned();
        let (c, s) = match (root(&compute), root(&store)) {
            (Some(c), Some(s)) => (c, s),
            (Some(c), None) => (c.clone(), c),
            (None, Some(s)) => (s.clone(), s),
            (None, None) => (Placement::Root, Placement::Root),
        };
        if f.name == q.output && (c != Placement::Root || s != Placement::Root) {
            return Err(err_place(&f.name, "the output is always computed at the root"));
        }
        let ds = loop_ds.remove(&f.name).unwrap_or_default();
        let base: HashMap<String, Base> =
            f.dims.iter().map(|d| (d.name.clone(), (Expr::Const(d.interval.min), d.interval.extent))).collect();
        let stages = (0..f.stages.len()).map(|si| schedule_stage(f, si, &base, &ds)).collect::<Result<_, _>>()?;
        funcs.push(FuncSchedule { name: f.name.clone(), directives: ds, compute: c, store: s, stages });
    }
    let sp = ScheduledPipeline { pipeline: q, funcs, inlined };
    check_placements(&sp)?;
    Ok(sp)
}

fn check_placements(sp: &ScheduledPipeline) -> Result<(), LowerError> {
    let p = &sp.pipeline;
    for fs in &sp.funcs {
        let Placement::At { func: cons, dim } = &fs.compute else {
            if let Placement::At { .. } = fs.store {
                return Err(err_place(&fs.name, "stored inside a loop but computed at the root"));
            }
            continue;
        };
        // Walk the chain of compute sites; it must end at the root.
        let mut seen = BTreeSet::new();
        let mut cur = fs.name.clone();
        while let Some(Placement::At { func, .. }) = sp.func(&cur).map(|f| &f.compute) {
            if !seen.insert(cur.clone()) {
                return Err(LowerError::PlacementCycle(fs.name.clone()));
            }
            cur = func.clone();
        }
        let rs = readers(p, &fs.name);
        let ci = p.func_index(cons).unwrap();
        if rs.is_empty() || rs.iter().any(|(g, _)| *g != ci) {
            return Err(err_place(&fs.name, format!("computed inside `{cons}`, which is not its only consumer")));
        }
        if rs.len() > 1 {
            return Err(err_place(&fs.name, format!("read by several stages of `{cons}`")));
        }
        let cst = &sp.func(cons).unwrap().stages[rs[0].1];
        let Some(k) = cst.dim(dim) else {
            return Err(LowerError::UnknownDim { func: cons.clone(), dim: dim.clone() });
        };
        if let Placement::At { func: sf, dim: sd } = &fs.store {
            let ks = cst.dim(sd).ok_or_else(|| LowerError::UnknownDim { func: sf.clone(), dim: sd.clone() })?;
            if sf != cons || ks > k {
                return Err(err_place(&fs.name, "storage must enclose the compute site"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_pipeline, parse_schedule};

    const BLUR: &str = "pipeline blur(inp[x in 0..blur_y.x.max + 2, y in 0..blur_y.y.max + 2]) -> blur_y[x in 0..1024, y in 0..1024] {
        blur_x(x, y) = (inp(x, y) + inp(x + 1, y) + inp(x + 2, y)) / 3;
        blur_y(x, y) = (blur_x(x, y) + blur_x(x, y + 1) + blur_x(x, y + 2)) / 3;
    }";

    const LISTING5: &str = "blur_y.split(y, yo, yi, 8).parallel(yo).split(x, xo, xi, 2).unroll(xi);
        blur_x.store_at(blur_y, yo).compute_at(blur_y, yi).split(x, xo, xi, 2).unroll(xi);";

    fn sched(src: &str, s: &str) -> Result<ScheduledPipeline, LowerError> {
        let p = parse_pipeline(src).unwrap();
        let ds = parse_schedule(s, &p).unwrap();
        apply_directives(&p, &ds)
    }

    #[test]
    fn listing5_dims() {
        let sp = sched(BLUR, LISTING5).unwrap();
        let y = &sp.func("blur_y").unwrap().stages[0];
        let got: Vec<(&str, i64, LoopKind)> = y.dims.iter().map(|d| (d.path.as_str(), d.extent, d.kind)).collect();
        assert_eq!(
            got,
            vec![
                ("y.yo", 128, LoopKind::Parallel),
                ("y.yi", 8, LoopKind::Serial),
                ("x.xo", 512, LoopKind::Serial),
                ("x.xi", 2, LoopKind::Unrolled),
            ]
        );
        assert!(y.guards.is_empty());
        let x = sp.func("blur_x").unwrap();
        assert_eq!(x.compute, Placement::At { func: "blur_y".into(), dim: "yi".into() });
        assert_eq!(x.store, Placement::At { func: "blur_y".into(), dim: "yo".into() });
    }

    #[test]
    fn empty_schedule_inlines() {
        let sp = sched(BLUR, "").unwrap();
        assert_eq!(sp.inlined, vec!["blur_x".to_string()]);
        assert_eq!(sp.pipeline.funcs.len(), 1);
        let rhs = sp.pipeline.funcs[0].stages[0].rhs.to_string();
        assert!(!rhs.contains("blur_x") && rhs.matches("inp(").count() == 9, "{rhs}");
    }

    const COUNT: &str = "pipeline count(inp[x in 0..count.x.max, y in 0..10]) -> count[x in 0..16] {
        rdom r in 0..10;
        count(x) = 0;
        count(x) = select(inp(x, r) > 0, count(x) + 1, count(x));
    }";

    #[test]
    fn split_with_tail_guard() {
        let sp = sched(COUNT, "count.split(r, ro, ri, 3);").unwrap();
        let st = &sp.funcs[0].stages[1];
        assert_eq!(st.dims.iter().map(|d| d.extent).collect::<Vec<_>>(), vec![16, 4, 3]);
        assert_eq!(st.guards.len(), 1);
        assert_eq!(st.guards[0].to_string(), "ro * 3 + ri < 10");
    }

    #[test]
    fn reorder_is_innermost_first() {
        let sp = sched(COUNT, "count.reorder(x, r);").unwrap();
        let names: Vec<&str> = sp.funcs[0].stages[1].dims.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, vec!["r", "x"]);
    }

    #[test]
    fn reduction_order_violation_rejected() {
        let e = sched(COUNT, "count.split(r, ro, ri, 5).reorder(ro, ri);").unwrap_err();
        assert!(matches!(e, LowerError::ReorderUnsafe { .. }));
    }

    #[test]
    fn fuse_extent_and_origin() {
        let sp = sched(BLUR, "blur_y.fuse(x, y, xy);").unwrap();
        let st = &sp.func("blur_y").unwrap().stages[0];
        assert_eq!(st.dims.len(), 1);
        assert_eq!(st.dims[0].extent, 1024 * 1024);
        let o = st.origin_map();
        assert_eq!(o["x"].to_string(), "xy % 1024");
        assert_eq!(o["y"].to_string(), "xy / 1024");
    }

    #[test]
    fn errors() {
        let e = sched(BLUR, "blur_y.split(x, xo, xi, 0);").unwrap_err();
        assert!(matches!(e, LowerError::SplitNonPositiveFactor { .. }));
        let e = sched(BLUR, "blur_y.parallel(x).fuse(x, y, xy);").unwrap_err();
        assert!(matches!(e, LowerError::FuseKindMismatch { .. }));
        let e = sched(BLUR, "blur_x.store_at(blur_y, x).compute_at(blur_y, y);").unwrap_err();
        assert!(matches!(e, LowerError::InvalidPlacement { .. }), "{e}");
    }
}
