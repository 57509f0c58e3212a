//! Permission generation and the bottom-up transformation of stage
//! annotations into loop invariants and parallel block contracts.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_rational::Ratio;
use thiserror::Error;

use crate::ir::{AnnotationKind, BinOp, Expr, Fraction, Func, Interval, Pipeline, QVar};
use crate::lower::{widen, FuncBounds, LoopDim, LoopKind, LoopNest, Node, StageRef, StageSchedule};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AnnotateError {
    #[error("reduction `{func}` has no invariant for its innermost variable `{var}`")]
    MissingReductionInvariant { func: String, var: String },
}

/// Annotations attached to one node. `context` stands for the same
/// predicate as both requires and ensures.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnnotationSet {
    pub requires: Vec<Expr>,
    pub ensures: Vec<Expr>,
    pub context: Vec<Expr>,
    pub invariants: Vec<Expr>,
}

impl AnnotationSet {
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn len(&self) -> usize {
        self.requires.len() + self.ensures.len() + self.context.len() + self.invariants.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (AnnotationKind, &Expr)> {
        let tag = |k: AnnotationKind| move |e| (k, e);
        (self.invariants.iter().map(tag(AnnotationKind::Invariant)))
            .chain(self.context.iter().map(tag(AnnotationKind::Context)))
            .chain(self.requires.iter().map(tag(AnnotationKind::Requires)))
            .chain(self.ensures.iter().map(tag(AnnotationKind::Ensures)))
    }

    fn push(&mut self, kind: AnnotationKind, e: Expr) {
        if e.is_true() {
            return;
        }
        match kind {
            AnnotationKind::Requires => self.requires.push(e),
            AnnotationKind::Ensures => self.ensures.push(e),
            AnnotationKind::Context => self.context.push(e),
            AnnotationKind::Invariant => self.invariants.push(e),
        }
    }

    fn extend(&mut self, o: AnnotationSet) {
        self.requires.extend(o.requires);
        self.ensures.extend(o.ensures);
        self.context.extend(o.context);
        self.invariants.extend(o.invariants);
    }

    pub fn map(&self, mut f: impl FnMut(&Expr) -> Expr) -> AnnotationSet {
        let mut g = |v: &Vec<Expr>| v.iter().map(&mut f).collect();
        AnnotationSet {
            requires: g(&self.requires),
            ensures: g(&self.ensures),
            context: g(&self.context),
            invariants: g(&self.invariants),
        }
    }
}

/// Annotations carried outward while walking one stage's loops from the
/// innermost to the outermost.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformState {
    /// Requires, ensures and context predicates (including permissions).
    pub stored: Vec<(AnnotationKind, Expr)>,
    /// Reduction invariant; for reductions only this value annotation is used.
    pub reduction: Option<Expr>,
    /// Reduction loops already passed, innermost first, with their bounds.
    pub passed: Vec<(String, Expr, Expr)>,
    /// Reduction loops not yet passed, innermost first.
    pub pending: Vec<String>,
    /// Names quantifiers must not use.
    pub avoid: BTreeSet<String>,
}

fn half() -> Fraction {
    Ratio::new(1, 2)
}

fn bound_vars(e: &Expr) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    e.walk(&mut |x| {
        if let Expr::Forall { vars, .. } = x {
            out.extend(vars.iter().map(|q| q.name.clone()));
        }
    });
    out
}

/// `(\forall vf; lo <= vf < hi; p[v := vf])`, separating when `p` holds
/// permissions.
pub fn quantify(p: &Expr, v: &str, lo: Expr, hi: Expr, avoid: &BTreeSet<String>) -> Expr {
    if !p.mentions_var(v) {
        return p.clone();
    }
    let mut taken = avoid.clone();
    taken.extend(p.free_vars());
    taken.extend(bound_vars(p));
    let fresh = crate::ir::fresh_name(&format!("{v}f"), &taken);
    let body = p.substitute(v, &Expr::Var(fresh.clone()));
    Expr::forall(vec![QVar::new(fresh, lo, hi)], body, p.contains_perm())
}

fn bounds_pred(d: &LoopDim, inclusive: bool) -> Expr {
    let v = Expr::Var(d.name.clone());
    let upper = if inclusive { Expr::le(v.clone(), d.max()) } else { Expr::lt(v.clone(), d.max()) };
    Expr::and(Expr::le(d.min.clone(), v), upper)
}

/// Applies the split and fuse rules: the algorithm's variables are
/// replaced by their expressions over loop variables, under the tail
/// guards of non-dividing splits.
pub fn transform_split_fuse(p: &Expr, origins: &HashMap<String, Expr>, guard: &Expr) -> Expr {
    Expr::implies(guard.clone(), p.substitute_all(origins))
}

/// Seeds of every stage at its canonical point: generated permissions,
/// pre-state predicates and the user's own annotations.
pub fn generate_permissions(p: &Pipeline) -> Result<BTreeMap<StageRef, AnnotationSet>, AnnotateError> {
    let mut out = BTreeMap::new();
    for f in &p.funcs {
        let pv = f.pure_vars();
        for (si, s) in f.stages.iter().enumerate() {
            let mut set = AnnotationSet::default();
            let point = Expr::Func { name: f.name.clone(), args: s.lhs.clone() };
            set.context.push(Expr::perm(point, Fraction::from_integer(1)));
            let bare = s.bare_pure_positions(&pv);
            if bare.iter().any(Option::is_none) {
                set.context.push(others_readable(f, &s.lhs, &bare));
            }
            if let Some(rd) = &s.rdom {
                let inner = &rd.vars[0];
                if inner.invariants.is_empty() {
                    return Err(AnnotateError::MissingReductionInvariant {
                        func: f.name.clone(),
                        var: inner.name.clone(),
                    });
                }
                set.invariants.push(Expr::and_all(inner.invariants.iter().map(|a| a.body.clone())));
            } else if bare.iter().all(Option::is_some) {
                for a in &s.annotations {
                    set.push(a.kind, a.body.clone());
                }
                if si > 0 {
                    for e in f.stages[si - 1].ensures() {
                        set.requires.push(e.clone());
                    }
                }
            }
            out.insert(StageRef { func: f.name.clone(), stage: si }, set);
        }
    }
    Ok(out)
}

/// Read permission on the points of `f` an update with a non-trivial
/// left-hand side leaves alone.
fn others_readable(f: &Func, lhs: &[Expr], bare: &[Option<usize>]) -> Expr {
    let mut qs = Vec::new();
    let mut args = Vec::new();
    let mut differs = Vec::new();
    for (i, d) in f.dims.iter().enumerate() {
        if bare[i].is_some() {
            args.push(lhs[i].clone());
            continue;
        }
        let q = format!("{}q", d.name);
        qs.push(QVar::new(q.clone(), Expr::Const(d.interval.min), Expr::Const(d.interval.max())));
        differs.push(Expr::bin(BinOp::Ne, Expr::Var(q.clone()), lhs[i].clone()));
        args.push(Expr::Var(q));
    }
    let any_differs = differs.into_iter().reduce(|a, b| Expr::bin(BinOp::Or, a, b)).unwrap();
    let perm = Expr::perm(Expr::Func { name: f.name.clone(), args }, half());
    Expr::forall(qs, Expr::implies(any_differs, perm), true)
}

/// Passes one loop, Table-1 style: returns what is attached to the loop and
/// what remains for the loops outside it.
pub fn transform_loop(state: TransformState, d: &LoopDim) -> (AnnotationSet, TransformState) {
    let mut set = AnnotationSet::default();
    let v = &d.name;
    let (lo, hi) = (d.min.clone(), d.max());
    let here = Expr::Var(v.clone());
    let q = |p: &Expr, a: Expr, b: Expr| quantify(p, v, a, b, &state.avoid);
    match d.kind {
        LoopKind::Serial => {
            set.invariants.push(bounds_pred(d, true));
            for (k, p) in &state.stored {
                let e = match k {
                    AnnotationKind::Ensures => q(p, lo.clone(), here.clone()),
                    AnnotationKind::Requires => q(p, here.clone(), hi.clone()),
                    _ => q(p, lo.clone(), hi.clone()),
                };
                set.push(AnnotationKind::Invariant, e);
            }
        }
        LoopKind::Parallel => {
            set.context.push(bounds_pred(d, false));
            for (k, p) in &state.stored {
                set.push(*k, p.clone());
            }
        }
        LoopKind::Unrolled => {}
    }
    let stored = state.stored.iter().map(|(k, p)| (*k, q(p, lo.clone(), hi.clone()))).collect();
    let (red, mut next) = transform_reduction(state.clone(), d);
    set.extend(red);
    next.stored = stored;
    (set, next)
}

/// The reduction part of [`transform_loop`].
pub fn transform_reduction(mut state: TransformState, d: &LoopDim) -> (AnnotationSet, TransformState) {
    let mut set = AnnotationSet::default();
    let Some(inv) = state.reduction.clone() else {
        return (set, state);
    };
    let v = &d.name;
    let (lo, hi) = (d.min.clone(), d.max());
    if d.is_reduction() {
        let inv = match state.passed.last() {
            Some((rp, rmin, _)) => inv.substitute(rp, rmin),
            None => inv,
        };
        if d.kind == LoopKind::Serial {
            set.push(AnnotationKind::Invariant, inv.clone());
        }
        state.reduction = Some(inv);
        state.passed.push((v.clone(), lo, hi));
        state.pending.retain(|r| r != v);
        return (set, state);
    }
    let (pre, post) = match state.passed.last() {
        Some((rp, rmin, rmax)) => (inv.substitute(rp, rmin), inv.substitute(rp, rmax)),
        None => match state.pending.first() {
            Some(rn) => (inv.clone(), inv.substitute(rn, &Expr::add(Expr::Var(rn.clone()), Expr::Const(1)))),
            None => (inv.clone(), inv.clone()),
        },
    };
    let here = Expr::Var(v.clone());
    match d.kind {
        LoopKind::Serial => {
            set.push(AnnotationKind::Invariant, quantify(&pre, v, here.clone(), hi.clone(), &state.avoid));
            set.push(AnnotationKind::Invariant, quantify(&post, v, lo.clone(), here, &state.avoid));
        }
        LoopKind::Parallel => {
            set.push(AnnotationKind::Requires, pre);
            set.push(AnnotationKind::Ensures, post);
        }
        LoopKind::Unrolled => {}
    }
    state.reduction = Some(quantify(&inv, v, lo, hi, &state.avoid));
    (set, state)
}

/// Guards under which a stage's statement runs: split tails and clamped
/// compute regions.
pub(crate) fn stage_guards(f: &Func, fb: &FuncBounds, st: &StageSchedule) -> Vec<Expr> {
    let origins = st.origin_map();
    let mut conds = st.guards.clone();
    for (d, span) in f.dims.iter().zip(&fb.compute) {
        if let (Some(iv), Some(o)) = (span.clamp, origins.get(&d.name)) {
            conds.push(Expr::le(Expr::Const(iv.min), o.clone()));
            conds.push(Expr::lt(o.clone(), Expr::Const(iv.max())));
        }
    }
    conds
}

/// Annotation sets for every loop of one stage, outermost first.
fn stage_loop_sets(
    f: &Func,
    si: usize,
    fb: &FuncBounds,
    seed: &AnnotationSet,
    avoid: &BTreeSet<String>,
) -> Vec<AnnotationSet> {
    let st = &fb.stages[si];
    let s = &f.stages[si];
    let origins = st.origin_map();
    let guards = stage_guards(f, fb, st);
    let red_loops: BTreeSet<&str> = st.dims.iter().filter(|d| d.is_reduction()).map(|d| d.name.as_str()).collect();
    let tail_in_reduction = guards.iter().any(|g| g.free_vars().iter().any(|v| red_loops.contains(v.as_str())));
    // Which reduction step runs does not matter for the point's permission,
    // so guards on reduction loops only restrict the reduction invariant.
    let pure_guard = Expr::and_all(
        guards.iter().filter(|g| !g.free_vars().iter().any(|v| red_loops.contains(v.as_str()))).cloned(),
    );
    let mut state = TransformState {
        stored: Vec::new(),
        reduction: None,
        passed: Vec::new(),
        pending: st.dims.iter().rev().filter(|d| d.is_reduction()).map(|d| d.name.clone()).collect(),
        avoid: avoid.clone(),
    };
    for (k, list) in [
        (AnnotationKind::Context, &seed.context),
        (AnnotationKind::Requires, &seed.requires),
        (AnnotationKind::Ensures, &seed.ensures),
    ] {
        for p in list {
            state.stored.push((k, transform_split_fuse(p, &origins, &pure_guard)));
        }
    }
    if let (Some(inv), Some(rd)) = (seed.invariants.first(), &s.rdom) {
        // Reduction variables split with a tail stop at their last value so
        // the invariant never talks about steps that are not executed.
        let mut red_origins = origins.clone();
        if tail_in_reduction {
            for rv in &rd.vars {
                if let Some(o) = red_origins.get_mut(&rv.name) {
                    if !matches!(o, Expr::Var(_)) {
                        *o = Expr::min(o.clone(), Expr::Const(rv.interval.max()));
                    }
                }
            }
        }
        state.reduction = Some(transform_split_fuse(inv, &red_origins, &pure_guard));
    }
    let mut sets = vec![AnnotationSet::default(); st.dims.len()];
    for k in (0..st.dims.len()).rev() {
        let (set, next) = transform_loop(state, &st.dims[k]);
        sets[k] = set;
        state = next;
    }
    sets
}

fn fraction_over(denoms: impl IntoIterator<Item = i64>) -> Fraction {
    denoms.into_iter().fold(half(), |f, n| f / n.max(1))
}

/// Arrays read and functions produced below a node.
#[derive(Default)]
struct Below {
    reads: BTreeSet<String>,
    produced: BTreeSet<String>,
}

fn below(n: &Node, out: &mut Below) {
    match n {
        Node::Assign(a) => {
            out.reads.extend(a.value.loaded_arrays());
            out.reads.extend(a.index.loaded_arrays());
        }
        Node::If { cond, .. } => out.reads.extend(cond.loaded_arrays()),
        Node::Produce { func, .. } => {
            out.produced.insert(func.clone());
        }
        _ => {}
    }
    for c in n.body() {
        below(c, out);
    }
}

struct Walk<'a> {
    p: &'a Pipeline,
    nest_allocs: &'a BTreeMap<String, crate::lower::FlatAlloc>,
    bounds: &'a crate::lower::Footprints,
    stage_sets: HashMap<StageRef, Vec<AnnotationSet>>,
    avoid: BTreeSet<String>,
}

#[derive(Clone, Default)]
struct Ctx {
    /// Extents of the parallel loops on the path.
    par: Vec<i64>,
    /// Consumed functions with the number of parallel loops outside their
    /// consume node.
    consumes: Vec<(String, usize)>,
    stores: BTreeSet<String>,
}

impl Walk<'_> {
    fn flat(&self, e: &Expr) -> Expr {
        crate::lower::flatten_with(self.p, self.nest_allocs, e)
    }

    /// Flattened value fact with input reads replaced by their abstraction.
    fn fact(&self, e: &Expr) -> Expr {
        self.flat(&abstract_inputs(self.p, self.nest_allocs, e))
    }

    fn quantified_box(&self, names: &[String], ranges: &[(Expr, Expr)], body: Expr, separating: bool) -> Expr {
        let qs = names.iter().zip(ranges).map(|(n, (lo, hi))| QVar::new(n.clone(), lo.clone(), hi.clone())).collect();
        Expr::forall(qs, body, separating)
    }

    fn fresh_vars(&self, dims: &[String]) -> Vec<String> {
        let mut taken = self.avoid.clone();
        dims.iter()
            .map(|d| {
                let n = crate::ir::fresh_name(d, &taken);
                taken.insert(n.clone());
                n
            })
            .collect()
    }

    fn input_family(&self, reads: &BTreeSet<String>, frac: Fraction, kind: AnnotationKind, set: &mut AnnotationSet) {
        for b in &self.p.inputs {
            if !reads.contains(&b.name) {
                continue;
            }
            let names = self.fresh_vars(&b.dims.iter().map(|d| d.name.clone()).collect::<Vec<_>>());
            let ranges: Vec<(Expr, Expr)> =
                b.dims.iter().map(|d| (Expr::Const(d.interval.min), Expr::Const(d.interval.max()))).collect();
            let at = Expr::Buffer { name: b.name.clone(), args: names.iter().cloned().map(Expr::Var).collect() };
            let perm = Expr::perm(self.flat(&at), frac);
            set.push(kind, self.quantified_box(&names, &ranges, perm, true));
            let eq = Expr::eq(self.flat(&at), self.fact(&at));
            set.push(kind, self.quantified_box(&names, &ranges, eq, false));
        }
    }

    fn consumed_family(&self, f: &str, frac: Fraction, kind: AnnotationKind, set: &mut AnnotationSet) {
        let func = self.p.func(f).unwrap();
        let fb = self.bounds.get(f).unwrap();
        let names = self.fresh_vars(&func.pure_vars());
        let at = Expr::Func { name: f.to_string(), args: names.iter().cloned().map(Expr::Var).collect() };
        let store: Vec<(Expr, Expr)> =
            fb.store.iter().map(|s| (s.min.clone(), Expr::add(s.min.clone(), Expr::Const(s.extent)))).collect();
        set.push(kind, self.quantified_box(&names, &store, Expr::perm(self.flat(&at), frac), true));
        let last = func.stages.last().unwrap();
        let facts: Vec<Expr> = last.ensures().cloned().collect();
        if facts.is_empty() {
            return;
        }
        let map: HashMap<String, Expr> =
            func.pure_vars().into_iter().zip(names.iter().cloned().map(Expr::Var)).collect();
        let body = Expr::and_all(facts.iter().map(|e| e.substitute_all(&map)));
        let region: Vec<(Expr, Expr)> = fb.compute.iter().map(|s| (s.lo(), s.hi())).collect();
        set.push(kind, self.quantified_box(&names, &region, self.fact(&body), false));
    }

    fn produced_family(&self, f: &str, l: &LoopDim, kind: AnnotationKind, set: &mut AnnotationSet) {
        let func = self.p.func(f).unwrap();
        let fb = self.bounds.get(f).unwrap();
        let names = self.fresh_vars(&func.pure_vars());
        let region: Vec<(Expr, Expr)> = match fb.enclosing.iter().position(|d| d.name == l.name) {
            Some(j) => {
                let from = if l.kind == LoopKind::Parallel { j + 1 } else { j };
                let ranged = &fb.enclosing[from..];
                fb.compute
                    .iter()
                    .zip(&fb.store)
                    .zip(&func.dims)
                    .map(|((c, s), d)| match widen(&c.min, c.extent, ranged) {
                        Some((lin, ext)) => clamp_range(lin.to_expr(), ext, c.clamp.map(|_| d.interval)),
                        None => (s.min.clone(), Expr::add(s.min.clone(), Expr::Const(s.extent))),
                    })
                    .collect()
            }
            None => fb.store.iter().map(|s| (s.min.clone(), Expr::add(s.min.clone(), Expr::Const(s.extent)))).collect(),
        };
        let at = Expr::Func { name: f.to_string(), args: names.iter().cloned().map(Expr::Var).collect() };
        let perm = Expr::perm(self.flat(&at), Fraction::from_integer(1));
        set.push(kind, self.quantified_box(&names, &region, perm, true));
    }

    fn loop_set(&self, l: &crate::lower::Loop, ctx: &Ctx) -> AnnotationSet {
        let mut set = AnnotationSet::default();
        let kind = match l.dim.kind {
            LoopKind::Unrolled => return set,
            LoopKind::Serial => AnnotationKind::Invariant,
            LoopKind::Parallel => AnnotationKind::Context,
        };
        let own = &self.stage_sets[&l.stage];
        let st = &self.bounds.get(&l.stage.func).unwrap().stages[l.stage.stage];
        let k = st.dim(&l.dim.name).expect("loop of its stage");
        let own = own[k].map(|e| self.finish(e));
        // Bounds first, then the families, then the stage's own annotations.
        let (bounds, own) = split_bounds(own, l.dim.kind);
        set.extend(bounds);
        let mut b = Below::default();
        for n in &l.body {
            below(n, &mut b);
        }
        let mut par = ctx.par.clone();
        if l.dim.kind == LoopKind::Parallel {
            par.push(l.dim.extent);
        }
        self.input_family(&b.reads, fraction_over(par.iter().copied()), kind, &mut set);
        for (f, outside) in &ctx.consumes {
            if b.reads.contains(f) {
                self.consumed_family(f, fraction_over(par[*outside..].iter().copied()), kind, &mut set);
            }
        }
        for f in &b.produced {
            if ctx.stores.contains(f) {
                self.produced_family(f, &l.dim, kind, &mut set);
            }
        }
        set.extend(own);
        set
    }

    /// Flattens a stage annotation, abstracting inputs outside permissions.
    fn finish(&self, e: &Expr) -> Expr {
        if e.contains_perm() {
            self.flat(e)
        } else {
            self.fact(e)
        }
    }

    fn walk(&self, nodes: &mut [Node], ctx: &Ctx) {
        for n in nodes {
            match n {
                Node::Loop(l) => {
                    l.annotations = self.loop_set(l, ctx);
                    let mut inner = ctx.clone();
                    if l.dim.kind == LoopKind::Parallel {
                        inner.par.push(l.dim.extent);
                    }
                    self.walk(&mut l.body, &inner);
                }
                Node::Consume { func, body } => {
                    let mut inner = ctx.clone();
                    inner.consumes.push((func.clone(), ctx.par.len()));
                    self.walk(body, &inner);
                }
                Node::Store { alloc, body } => {
                    let mut inner = ctx.clone();
                    inner.stores.insert(alloc.func.clone());
                    self.walk(body, &inner);
                }
                Node::Produce { body, .. } | Node::If { body, .. } => self.walk(body, ctx),
                Node::Assign(_) => {}
            }
        }
    }
}

fn clamp_range(min: Expr, ext: i64, dom: Option<Interval>) -> (Expr, Expr) {
    let hi = Expr::add(min.clone(), Expr::Const(ext));
    match dom {
        Some(iv) => (Expr::max(min, Expr::Const(iv.min)), Expr::min(hi, Expr::Const(iv.max()))),
        None => (min, hi),
    }
}

/// Moves the loop-bound predicate to the front.
fn split_bounds(set: AnnotationSet, kind: LoopKind) -> (AnnotationSet, AnnotationSet) {
    let mut bounds = AnnotationSet::default();
    let mut rest = set;
    match kind {
        LoopKind::Serial if !rest.invariants.is_empty() => bounds.invariants.push(rest.invariants.remove(0)),
        LoopKind::Parallel if !rest.context.is_empty() => bounds.context.push(rest.context.remove(0)),
        _ => {}
    }
    (bounds, rest)
}

/// Replaces input-buffer reads by calls of the abstract function standing
/// for that buffer, at the flattened index.
pub fn abstract_inputs(p: &Pipeline, allocs: &BTreeMap<String, crate::lower::FlatAlloc>, e: &Expr) -> Expr {
    e.rewrite(&mut |x| match x {
        Expr::Buffer { name, args } => {
            let a = allocs.get(name)?;
            let args: Vec<Expr> = args.iter().map(|a| abstract_inputs(p, allocs, a)).collect();
            Some(Expr::InputAbs {
                buffer: name.clone(),
                name: p.input_abstraction_name(name),
                index: Box::new(crate::lower::flatten_with(p, allocs, &a.offset(&args))),
            })
        }
        _ => None,
    })
}

fn all_names(nest: &LoopNest) -> BTreeSet<String> {
    let p = &nest.pipeline;
    let mut avoid: BTreeSet<String> = nest.loops().iter().map(|l| l.dim.name.clone()).collect();
    for f in &p.funcs {
        avoid.extend(f.pure_vars());
        for s in &f.stages {
            if let Some(rd) = &s.rdom {
                avoid.extend(rd.vars.iter().map(|v| v.name.clone()));
            }
        }
    }
    for b in &p.inputs {
        avoid.extend(b.dims.iter().map(|d| d.name.clone()));
    }
    avoid.extend(p.params.iter().map(|(n, _)| n.clone()));
    avoid
}

/// Attaches invariants and block contracts to every loop of the nest and
/// the pipeline contract to the nest itself.
pub fn annotate(nest: &mut LoopNest) -> Result<(), AnnotateError> {
    let p = nest.pipeline.clone();
    let seeds = generate_permissions(&p)?;
    let avoid = all_names(nest);
    let mut stage_sets = HashMap::new();
    for fb in &nest.bounds.funcs {
        let f = p.func(&fb.func).unwrap();
        for si in 0..f.stages.len() {
            let r = StageRef { func: f.name.clone(), stage: si };
            stage_sets.insert(r.clone(), stage_loop_sets(f, si, fb, &seeds[&r], &avoid));
        }
    }
    let mut body = std::mem::take(&mut nest.body);
    let contract = {
        let w = Walk { p: &p, nest_allocs: &nest.allocs, bounds: &nest.bounds, stage_sets, avoid };
        w.walk(&mut body, &Ctx::default());
        pipeline_contract(&w)
    };
    nest.body = body;
    nest.contract = contract;
    Ok(())
}

fn pipeline_contract(w: &Walk<'_>) -> AnnotationSet {
    let p = w.p;
    let mut set = AnnotationSet::default();
    let reads: BTreeSet<String> = p.inputs.iter().map(|b| b.name.clone()).collect();
    w.input_family(&reads, half(), AnnotationKind::Context, &mut set);
    let out = p.output_func();
    let names = w.fresh_vars(&out.pure_vars());
    let ranges: Vec<(Expr, Expr)> =
        out.dims.iter().map(|d| (Expr::Const(d.interval.min), Expr::Const(d.interval.max()))).collect();
    let at = Expr::Func { name: out.name.clone(), args: names.iter().cloned().map(Expr::Var).collect() };
    set.push(
        AnnotationKind::Context,
        w.quantified_box(&names, &ranges, Expr::perm(w.flat(&at), Fraction::from_integer(1)), true),
    );
    let keep_bounds = |e: &Expr| {
        e.rewrite(&mut |x| match x {
            Expr::Func { .. } | Expr::Buffer { .. } => Some(w.flat(x)),
            _ => None,
        })
    };
    for a in &p.requires {
        set.push(AnnotationKind::Requires, keep_bounds(&a.body));
    }
    for b in &p.inputs {
        let names = w.fresh_vars(&b.dims.iter().map(|d| d.name.clone()).collect::<Vec<_>>());
        let ranges: Vec<(Expr, Expr)> =
            b.dims.iter().map(|d| (Expr::Const(d.interval.min), Expr::Const(d.interval.max()))).collect();
        let map: HashMap<String, Expr> =
            b.dims.iter().map(|d| d.name.clone()).zip(names.iter().cloned().map(Expr::Var)).collect();
        for a in &b.requires {
            let body = w.flat(&a.body.substitute_all(&map));
            set.push(AnnotationKind::Requires, w.quantified_box(&names, &ranges, body, false));
        }
    }
    for a in &p.ensures {
        set.push(AnnotationKind::Ensures, w.flat(&a.body));
    }
    set
}

/// Annotated loop nest of a pipeline under a schedule.
pub fn lower_annotated(p: &Pipeline, ds: &[crate::parse::Directive]) -> Result<LoopNest, crate::Error> {
    let mut nest = crate::lower::lower(p, ds)?;
    annotate(&mut nest)?;
    Ok(nest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{print_expr, Syntax};
    use crate::parse::{parse_pipeline, parse_schedule};

    const BLUR: &str = include_str!("../../../../corpus/blur/blur.hal");
    const LISTING5: &str = include_str!("../../../../corpus/blur/listing5.sched");

    fn annotated(src: &str, sched: &str) -> LoopNest {
        let p = parse_pipeline(src).unwrap();
        lower_annotated(&p, &parse_schedule(sched, &p).unwrap()).unwrap()
    }

    fn texts(v: &[Expr]) -> Vec<String> {
        v.iter().map(|e| print_expr(e, Syntax::CAnnot)).collect()
    }

    #[test]
    fn blur_point_permission() {
        let p = parse_pipeline(BLUR).unwrap();
        let seeds = generate_permissions(&p).unwrap();
        let s = &seeds[&StageRef { func: "blur_x".into(), stage: 0 }];
        assert_eq!(print_expr(&s.context[0], Syntax::Dsl), "Perm(blur_x(x, y), 1\\1)");
    }

    #[test]
    fn listing5_consume_loop() {
        let n = annotated(BLUR, LISTING5);
        let consume = n.loops().into_iter().filter(|l| l.stage.func == "blur_y" && l.dim.name == "xo").next().unwrap();
        let inv = texts(&consume.annotations.invariants);
        assert_eq!(inv[0], "0 <= xo && xo <= 512");
        assert!(inv[1].starts_with("(\\forall* int x1, int y1; 0<=x1 && x1<1024 && yo * 8<=y1 && y1<yo * 8 + 10; Perm(&blur_x["), "{}", inv[1]);
        assert!(inv[1].ends_with("1\\2))"), "{}", inv[1]);
        assert!(inv[2].contains("yo * 8 + yi<=y1 && y1<yo * 8 + yi + 3"), "{}", inv[2]);
        assert!(inv[3].starts_with("(\\forall* int xof, int xif; 0<=xof && xof<512 && 0<=xif && xif<2; Perm(&blur_y["), "{}", inv[3]);
        assert!(inv[4].contains("0<=xof && xof<xo"), "{}", inv[4]);
        assert!(inv[4].contains("p_i("), "{}", inv[4]);
        assert_eq!(inv.len(), 5);
    }

    #[test]
    fn listing5_parallel_contract_divides_input_fraction() {
        let n = annotated(BLUR, LISTING5);
        let yo = n.loops()[0];
        assert_eq!(yo.dim.kind, LoopKind::Parallel);
        let ctx = texts(&yo.annotations.context);
        assert_eq!(ctx[0], "0 <= yo && yo < 128");
        assert!(ctx[1].contains("1\\256"), "{}", ctx[1]);
        assert_eq!(yo.annotations.ensures.len(), 1);
        assert!(yo.annotations.invariants.is_empty());
    }

    #[test]
    fn unrolled_loops_carry_nothing() {
        let n = annotated(BLUR, LISTING5);
        assert!(n.loops().iter().filter(|l| l.dim.kind == LoopKind::Unrolled).all(|l| l.annotations.is_empty()));
    }

    #[test]
    fn produced_region_at_yi_covers_ten_rows() {
        let n = annotated(BLUR, LISTING5);
        let yi = n.loops().into_iter().find(|l| l.dim.name == "yi").unwrap();
        let inv = texts(&yi.annotations.invariants);
        assert!(inv.iter().any(|s| s.contains("yo * 8<=y1 && y1<yo * 8 + 10") && s.contains("1\\1")), "{inv:#?}");
    }

    const COUNT: &str = include_str!("../../../../corpus/count/count.hal");

    #[test]
    fn reduction_invariants_follow_the_table() {
        let n = annotated(COUNT, "");
        let loops = n.loops();
        let r = loops.iter().find(|l| l.dim.name == "r").unwrap();
        let inv = texts(&r.annotations.invariants);
        assert!(inv.iter().any(|s| s.contains("0 <= count[x] && count[x] <= r")), "{inv:#?}");
        let x = loops.iter().filter(|l| l.dim.name == "x").nth(1).unwrap();
        let inv = texts(&x.annotations.invariants);
        // points not yet reached are at the start of the reduction, the
        // others at its end.
        assert!(inv.iter().any(|s| s.contains("x<=xf") && s.contains("count[xf] <= 0")), "{inv:#?}");
        assert!(inv.iter().any(|s| s.contains("xf<x") && s.contains("count[xf] <= 10")), "{inv:#?}");
    }

    #[test]
    fn missing_reduction_invariant() {
        let src = "pipeline s(inp[i in 0..4]) -> s[x in 0..2] { rdom r in 0..4; s(x) = 0; s(x) = s(x) + inp(r); }";
        let p = parse_pipeline(src).unwrap();
        assert!(matches!(generate_permissions(&p), Err(AnnotateError::MissingReductionInvariant { .. })));
    }
}
