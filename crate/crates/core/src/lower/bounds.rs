//! Bounds inference: the region of each function computed at its compute
//! site and the region its allocation must cover.

use std::collections::{BTreeSet, HashMap};

use super::affine::Lin;
use super::{readers, schedule_stage, Base, LoopDim, LowerError, Placement, ScheduledPipeline, StageSchedule};
use crate::ir::range::{range_of, PipelineEnv, Range};
use crate::ir::{fresh_name, Expr, Func, Interval, Pipeline};

/// `extent` consecutive points from `min`. When `clamp` is set the span may
/// stick out of the function's domain and only its intersection with the
/// given interval is meaningful.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub min: Expr,
    pub extent: i64,
    pub clamp: Option<Interval>,
}

impl Span {
    pub fn constant(iv: Interval) -> Span {
        Span { min: Expr::Const(iv.min), extent: iv.extent, clamp: None }
    }

    /// First point, after clamping.
    pub fn lo(&self) -> Expr {
        match self.clamp {
            Some(iv) => Expr::max(self.min.clone(), Expr::Const(iv.min)),
            None => self.min.clone(),
        }
    }

    /// One past the last point, after clamping.
    pub fn hi(&self) -> Expr {
        let end = Expr::add(self.min.clone(), Expr::Const(self.extent));
        match self.clamp {
            Some(iv) => Expr::min(end, Expr::Const(iv.max())),
            None => end,
        }
    }
}

/// Placement and loops of one function after bounds inference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuncBounds {
    pub func: String,
    /// Region produced at the compute site, one span per dimension.
    pub compute: Vec<Span>,
    /// Region covered by the allocation.
    pub store: Vec<Span>,
    /// Loops of every stage, renamed apart from the enclosing loops.
    pub stages: Vec<StageSchedule>,
    /// Loops enclosing the compute site, outermost first.
    pub enclosing: Vec<LoopDim>,
    /// How many of `enclosing` also enclose the allocation.
    pub store_depth: usize,
    /// Consumer stage and loop index of the compute site.
    pub site: Option<(String, usize, usize)>,
    /// Consumer loop index of the storage site.
    pub store_site: Option<usize>,
}

impl FuncBounds {
    pub fn alloc_size(&self) -> i64 {
        self.store.iter().map(|s| s.extent).product()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Footprints {
    pub funcs: Vec<FuncBounds>,
}

impl Footprints {
    pub fn get(&self, f: &str) -> Option<&FuncBounds> {
        self.funcs.iter().find(|b| b.func == f)
    }
}

/// Concrete value ranges of loop variables, outermost first.
pub(crate) fn concrete_ranges(p: &Pipeline, loops: &[LoopDim]) -> HashMap<String, Range> {
    let mut map: HashMap<String, Range> = HashMap::new();
    for d in loops {
        let r = {
            let env = PipelineEnv { pipeline: p, vars: |n: &str| map.get(n).copied() };
            range_of(&d.min, &env).unwrap_or((0, 0))
        };
        map.insert(d.name.clone(), (r.0, r.1 + d.extent - 1));
    }
    map
}

/// Widens the span `[e, e + extent)` over the given loops, which take every
/// value of their range. `None` when the result is not affine.
pub(crate) fn widen(e: &Expr, extent: i64, ranged: &[LoopDim]) -> Option<(Lin, i64)> {
    let mut lin = Lin::of(e);
    let (mut lo, mut hi) = (0i64, 0i64);
    loop {
        let hit = ranged.iter().find_map(|d| lin.var_term(&d.name).map(|(i, c)| (i, c, d)));
        let Some((i, c, d)) = hit else { break };
        lin.terms.remove(i);
        lin = lin.add(&Lin::of(&Expr::mul(d.min.clone(), Expr::Const(c))));
        if c > 0 {
            hi += c * (d.extent - 1);
        } else {
            lo += c * (d.extent - 1);
        }
    }
    let names: BTreeSet<&str> = ranged.iter().map(|d| d.name.as_str()).collect();
    if lin.terms.iter().any(|(a, _)| a.free_vars().iter().any(|v| names.contains(v.as_str()))) {
        return None;
    }
    lin.k += lo;
    Some((lin, extent + hi - lo))
}

/// Smallest span containing all the given ones, if they share their
/// symbolic part.
fn hull(spans: &[(Lin, i64)]) -> Option<(Lin, i64)> {
    let (first, _) = spans.first()?;
    if !spans.iter().all(|(l, _)| l.same_shape(first)) {
        return None;
    }
    let lo = spans.iter().map(|(l, _)| l.k).min()?;
    let hi = spans.iter().map(|(l, e)| l.k + e).max()?;
    let mut l = first.clone();
    l.k = lo;
    Some((l, hi - lo))
}

fn env_range(p: &Pipeline, ranges: &HashMap<String, Range>, e: &Expr) -> Option<Range> {
    let env = PipelineEnv { pipeline: p, vars: |n: &str| ranges.get(n).copied() };
    range_of(e, &env)
}

/// Marks the span as clamped unless it provably lies inside `dom`.
fn settle(p: &Pipeline, ranges: &HashMap<String, Range>, min: Expr, extent: i64, dom: Interval) -> Span {
    let inside = env_range(p, ranges, &min).is_some_and(|(lo, hi)| lo >= dom.min && hi + extent <= dom.max());
    Span { min, extent, clamp: if inside { None } else { Some(dom) } }
}

fn domain_spans(f: &Func) -> Vec<Span> {
    f.dims.iter().map(|d| Span::constant(d.interval)).collect()
}

/// Accesses of `f` in a stage, arguments rewritten over the stage's loops.
fn accesses(p: &Pipeline, f: &str, cons: usize, si: usize, st: &StageSchedule) -> Vec<Vec<Expr>> {
    let s = &p.funcs[cons].stages[si];
    let origins = st.origin_map();
    let mut out = Vec::new();
    let mut look = |e: &Expr| {
        e.walk(&mut |x| {
            if let Expr::Func { name, args } = x {
                if name == f {
                    out.push(args.iter().map(|a| a.substitute_all(&origins)).collect());
                }
            }
        })
    };
    look(&s.rhs);
    if let Some(g) = &s.guard {
        look(g);
    }
    out
}

const BASE_MARK: &str = "#";

/// Loops of every stage of `f` with pure variables starting at `base`,
/// renamed apart from `taken`.
fn stage_schedules(
    f: &Func,
    directives: &[crate::parse::Directive],
    base: &[Span],
    taken: &BTreeSet<String>,
) -> Result<Vec<StageSchedule>, LowerError> {
    let marks: HashMap<String, Base> = f
        .dims
        .iter()
        .zip(base)
        .map(|(d, s)| (d.name.clone(), (Expr::Var(format!("{BASE_MARK}{}", d.name)), s.extent)))
        .collect();
    let real: HashMap<String, Expr> =
        f.dims.iter().zip(base).map(|(d, s)| (format!("{BASE_MARK}{}", d.name), s.min.clone())).collect();
    let mut out = Vec::new();
    for si in 0..f.stages.len() {
        let mut st = schedule_stage(f, si, &marks, directives)?;
        let mut avoid: BTreeSet<String> = taken.clone();
        avoid.extend(st.dims.iter().map(|d| d.name.clone()));
        let mut renames: HashMap<String, Expr> = HashMap::new();
        for d in st.dims.iter_mut() {
            if taken.contains(&d.name) {
                let fresh = fresh_name(&format!("{}_{}", d.name, f.name), &avoid);
                avoid.insert(fresh.clone());
                renames.insert(d.name.clone(), Expr::Var(fresh.clone()));
                d.name = fresh;
            }
        }
        let fix = |e: &Expr| e.substitute_all(&renames).substitute_all(&real).simplify();
        for (_, o) in st.origins.iter_mut() {
            *o = fix(o);
        }
        for g in st.guards.iter_mut() {
            *g = fix(g);
        }
        for d in st.dims.iter_mut() {
            d.min = fix(&d.min);
        }
        out.push(st);
    }
    Ok(out)
}

/// Computes, for every function, the loops of its stages and the regions it
/// computes and stores, working from the output towards the inputs.
pub fn infer_bounds(sp: &ScheduledPipeline) -> Result<Footprints, LowerError> {
    let p = &sp.pipeline;
    let mut done: HashMap<String, FuncBounds> = HashMap::new();
    for fi in (0..p.funcs.len()).rev() {
        let f = &p.funcs[fi];
        let fs = &sp.funcs[fi];
        let fb = match &fs.compute {
            Placement::Root | Placement::Inline => {
                let spans = domain_spans(f);
                let stages = stage_schedules(f, &fs.directives, &spans, &BTreeSet::new())?;
                FuncBounds {
                    func: f.name.clone(),
                    compute: spans.clone(),
                    store: spans,
                    stages,
                    enclosing: Vec::new(),
                    store_depth: 0,
                    site: None,
                    store_site: None,
                }
            }
            Placement::At { func: cons, dim } => {
                let pv = f.pure_vars();
                if f.stages.iter().any(|s| s.bare_pure_positions(&pv).iter().any(Option::is_none)) {
                    return Err(LowerError::InvalidPlacement {
                        func: f.name.clone(),
                        reason: "a function with scattered updates must be computed at the root".into(),
                    });
                }
                let cb = &done[cons];
                let (gi, si) = readers(p, &f.name)[0];
                let k = sp.funcs[gi].stages[si].dim(dim).expect("placement checked");
                let cst = &cb.stages[si];
                let mut chain = cb.enclosing.clone();
                chain.extend(cst.dims[..=k].iter().cloned());
                let mut all = chain.clone();
                all.extend(cst.dims[k + 1..].iter().cloned());
                let ranges = concrete_ranges(p, &all);
                let acc = accesses(p, &f.name, gi, si, cst);
                let ranged = &cst.dims[k + 1..];
                let mut compute = Vec::new();
                for (di, d) in f.dims.iter().enumerate() {
                    let widened: Option<Vec<(Lin, i64)>> = acc.iter().map(|a| widen(&a[di], 1, ranged)).collect();
                    let span = match widened.as_deref().and_then(hull) {
                        Some((l, e)) => settle(p, &ranges, l.to_expr(), e, d.interval),
                        None => fallback(p, &ranges, acc.iter().map(|a| &a[di]), d.interval),
                    };
                    compute.push(span);
                }
                let (store, store_depth, store_site) = match &fs.store {
                    Placement::At { dim: sd, .. } => {
                        let ks = sp.funcs[gi].stages[si].dim(sd).expect("placement checked");
                        let between = &cst.dims[ks + 1..=k];
                        let store: Option<Vec<Span>> = compute
                            .iter()
                            .map(|s| {
                                widen(&s.min, s.extent, between)
                                    .map(|(l, e)| Span { min: l.to_expr(), extent: e, clamp: None })
                            })
                            .collect();
                        (store.unwrap_or_else(|| domain_spans(f)), cb.enclosing.len() + ks + 1, Some(ks))
                    }
                    _ => (domain_spans(f), 0, None),
                };
                let taken: BTreeSet<String> = chain.iter().map(|d| d.name.clone()).collect();
                let stages = stage_schedules(f, &fs.directives, &compute, &taken)?;
                FuncBounds {
                    func: f.name.clone(),
                    compute,
                    store,
                    stages,
                    enclosing: chain,
                    store_depth,
                    site: Some((cons.clone(), si, k)),
                    store_site,
                }
            }
        };
        done.insert(f.name.clone(), fb);
    }
    let funcs = p.funcs.iter().map(|f| done.remove(&f.name).unwrap()).collect();
    Ok(Footprints { funcs })
}

/// Constant span covering every access over the concrete loop ranges,
/// limited to the domain.
fn fallback<'a>(p: &Pipeline, ranges: &HashMap<String, Range>, args: impl Iterator<Item = &'a Expr>, dom: Interval) -> Span {
    let mut lo = dom.max();
    let mut hi = dom.min - 1;
    for a in args {
        let (l, h) = env_range(p, ranges, a).unwrap_or((dom.min, dom.max() - 1));
        lo = lo.min(l);
        hi = hi.max(h);
    }
    let lo = lo.max(dom.min);
    let hi = hi.min(dom.max() - 1);
    Span::constant(Interval::from_bounds(lo, hi + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::apply_directives;
    use crate::parse::{parse_pipeline, parse_schedule};

    const BLUR: &str = "pipeline blur(inp[x in 0..blur_y.x.max + 2, y in 0..blur_y.y.max + 2]) -> blur_y[x in 0..1024, y in 0..1024] {
        blur_x(x, y) = (inp(x, y) + inp(x + 1, y) + inp(x + 2, y)) / 3;
        blur_y(x, y) = (blur_x(x, y) + blur_x(x, y + 1) + blur_x(x, y + 2)) / 3;
    }";

    fn fp(s: &str) -> Footprints {
        let p = parse_pipeline(BLUR).unwrap();
        let ds = parse_schedule(s, &p).unwrap();
        infer_bounds(&apply_directives(&p, &ds).unwrap()).unwrap()
    }

    #[test]
    fn listing5_footprint_and_allocation() {
        let f = fp("blur_y.split(y, yo, yi, 8).parallel(yo).split(x, xo, xi, 2).unroll(xi);
            blur_x.store_at(blur_y, yo).compute_at(blur_y, yi).split(x, xo, xi, 2).unroll(xi);");
        let b = f.get("blur_x").unwrap();
        assert_eq!(b.compute[1].min.to_string(), "yo * 8 + yi");
        assert_eq!(b.compute[1].extent, 3);
        assert_eq!((b.compute[0].min.clone(), b.compute[0].extent), (Expr::Const(0), 1024));
        assert!(b.compute.iter().all(|s| s.clamp.is_none()));
        assert_eq!(b.store[1].min.to_string(), "yo * 8");
        assert_eq!(b.alloc_size(), 10240);
        assert_eq!(b.store_depth, 1);
        let names: Vec<&str> = b.stages[0].dims.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, vec!["y", "xo", "xi"]);
    }

    #[test]
    fn renamed_apart_from_enclosing_loops() {
        let f = fp("blur_x.compute_at(blur_y, y);");
        let b = f.get("blur_x").unwrap();
        let names: Vec<&str> = b.stages[0].dims.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, vec!["y_blur_x", "x"]);
        assert_eq!(b.stages[0].dims[0].min.to_string(), "y");
        assert_eq!(b.alloc_size(), 3 * 1024);
    }

    #[test]
    fn inlined_has_no_entry() {
        let f = fp("");
        assert!(f.get("blur_x").is_none());
    }

    #[test]
    fn fused_site_is_affine_in_atoms() {
        let f = fp("blur_y.fuse(x, y, xy).parallel(xy); blur_x.compute_at(blur_y, xy);");
        let b = f.get("blur_x").unwrap();
        assert_eq!(b.compute[0].extent, 1);
        assert_eq!(b.compute[1].extent, 3);
        assert_eq!(b.compute[1].min.to_string(), "xy / 1024");
    }

    #[test]
    fn split_tail_is_clamped() {
        let p = parse_pipeline(&BLUR.replace("1024", "10")).unwrap();
        let ds = parse_schedule("blur_y.split(y, yo, yi, 4); blur_x.compute_at(blur_y, yo);", &p).unwrap();
        let f = infer_bounds(&apply_directives(&p, &ds).unwrap()).unwrap();
        let b = f.get("blur_x").unwrap();
        // yo in 0..3 covers rows up to 13 but blur_x only has 12.
        assert_eq!(b.compute[1].extent, 6);
        assert_eq!(b.compute[1].clamp, Some(Interval::new(0, 12)));
    }
}
