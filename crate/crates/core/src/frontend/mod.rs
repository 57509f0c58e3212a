//! Encoding of an annotated pipeline into pure functions: one abstract
//! function per input buffer, one function per stage, and recursion for
//! reductions.

mod pvl;

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::ir::{c, var, Annotation, AnnotationKind, Bound, Expr, Func, Interval, Pipeline, QVar, Stage, StageKind};

pub use pvl::print_program;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PureFunctionDecl {
    pub name: String,
    /// Integer parameters, in order.
    pub params: Vec<String>,
    pub requires: Vec<Expr>,
    pub ensures: Vec<Expr>,
    /// `None` omits the clause, an empty list prints a bare `decreases;`.
    pub decreases: Option<Vec<String>>,
    /// Abstract functions have no body.
    pub body: Option<Expr>,
    /// Parameter ranges over which the function is meant to be evaluated.
    pub domain: Vec<Interval>,
}

impl PureFunctionDecl {
    fn new(name: impl Into<String>, params: Vec<String>, body: Option<Expr>) -> Self {
        PureFunctionDecl {
            name: name.into(),
            params,
            requires: Vec::new(),
            ensures: Vec::new(),
            decreases: Some(Vec::new()),
            body,
            domain: Vec::new(),
        }
    }

    /// Whether the body calls the function itself.
    pub fn is_recursive(&self) -> bool {
        self.body.as_ref().is_some_and(|b| !self_calls(self, b).is_empty())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PipelineLemma {
    pub requires: Vec<Expr>,
    pub ensures: Vec<Expr>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedProgram {
    pub declarations: Vec<PureFunctionDecl>,
    pub lemma: PipelineLemma,
}

impl EncodedProgram {
    pub fn decl(&self, name: &str) -> Option<&PureFunctionDecl> {
        self.declarations.iter().find(|d| d.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("reduction variable `{rvar}` of `{func}` has no invariant")]
    MissingReductionInvariant { func: String, rvar: String },
    #[error("`{0}` has no intermediate ensures to derive a postcondition from")]
    NoIntermediateAnnotation(String),
}

/// How references to the function being encoded are rewritten.
enum SelfRef<'a> {
    /// The canonical point becomes `\result`.
    Result,
    /// Calls go to another encoded function.
    Call(&'a dyn Fn(Vec<Expr>) -> Expr),
}

fn call(name: &str, args: Vec<Expr>) -> Expr {
    Expr::Call { name: name.to_string(), args }
}

/// Translates a DSL expression: function and buffer accesses become calls.
fn to_pvl(e: &Expr, own: &str, canonical: &[Expr], mode: &SelfRef<'_>) -> Expr {
    e.rewrite(&mut |n| match n {
        Expr::Func { name, args } | Expr::Buffer { name, args } => {
            let args: Vec<Expr> = args.iter().map(|a| to_pvl(a, own, canonical, mode)).collect();
            if name != own {
                return Some(call(name, args));
            }
            Some(match mode {
                SelfRef::Result if args == canonical => Expr::Result,
                SelfRef::Result => call(name, args),
                SelfRef::Call(f) => f(args),
            })
        }
        _ => None,
    })
}

fn range_requires(v: &str, lo: i64, hi: i64, inclusive: bool) -> Expr {
    let upper = if inclusive { Expr::le(var(v), c(hi)) } else { Expr::lt(var(v), c(hi)) };
    Expr::and(Expr::le(c(lo), var(v)), upper)
}

fn add_contract(d: &mut PureFunctionDecl, anns: &[Annotation], own: &str, canonical: &[Expr]) {
    for a in anns {
        let body = to_pvl(&a.body, own, canonical, &SelfRef::Result);
        match a.kind {
            AnnotationKind::Requires => d.requires.push(body),
            AnnotationKind::Ensures => d.ensures.push(body),
            AnnotationKind::Context => {
                d.requires.push(body.clone());
                d.ensures.push(body);
            }
            AnnotationKind::Invariant => {}
        }
    }
}

/// Abstract function for a buffer plus its bound functions.
pub fn encode_buffer(p: &Pipeline, name: &str) -> Vec<PureFunctionDecl> {
    let Some(b) = p.buffer(name) else { return Vec::new() };
    let params: Vec<String> = b.dims.iter().map(|d| d.name.clone()).collect();
    let canonical: Vec<Expr> = params.iter().map(var).collect();
    let mut abs = PureFunctionDecl::new(&b.name, params, None);
    abs.domain = b.dims.iter().map(|d| d.interval).collect();
    for a in &b.requires {
        abs.ensures.push(to_pvl(&a.body, &b.name, &canonical, &SelfRef::Result));
    }
    let mut out = vec![abs];
    out.extend(bound_decls(&b.name, &b.dims));
    out
}

fn bound_decls(entity: &str, dims: &[crate::ir::Dim]) -> Vec<PureFunctionDecl> {
    let mut out = Vec::new();
    for d in dims {
        for (bound, v) in [(Bound::Min, d.interval.min), (Bound::Max, d.interval.max())] {
            let mut decl = PureFunctionDecl::new(format!("{entity}_{}_{bound}", d.name), Vec::new(), Some(c(v)));
            decl.decreases = None;
            out.push(decl);
        }
    }
    out
}

/// Names of the encoded functions of one `Func`.
struct StageNames {
    stages: Vec<String>,
    /// Per stage, the recursive function of each reduction variable
    /// (innermost first).
    recursive: Vec<Vec<String>>,
}

fn stage_names(f: &Func, used: &mut BTreeSet<String>) -> StageNames {
    let last = f.stages.len() - 1;
    let mut fresh = |base: String| {
        let n = crate::ir::fresh_name(&base, used);
        used.insert(n.clone());
        n
    };
    let mut stages = Vec::new();
    let mut recursive = Vec::new();
    for (i, s) in f.stages.iter().enumerate() {
        let name = if i == last { f.name.clone() } else { fresh(format!("{}{i}", f.name)) };
        stages.push(name);
        let rv = match &s.rdom {
            Some(rd) if rd.vars.len() == 1 => vec![fresh(format!("{}{i}{}", f.name, rd.vars[0].name))],
            Some(rd) => rd.vars.iter().map(|v| fresh(format!("{}{i}_{}", f.name, v.name))).collect(),
            None => Vec::new(),
        };
        recursive.push(rv);
    }
    StageNames { stages, recursive }
}

/// Encodes a pure (first) stage.
pub fn encode_pure_stage(f: &Func, name: &str) -> PureFunctionDecl {
    let s = &f.stages[0];
    let params = f.pure_vars();
    let canonical: Vec<Expr> = params.iter().map(var).collect();
    let body = to_pvl(&s.rhs, &f.name, &canonical, &SelfRef::Call(&|args| call(&f.name, args)));
    let mut d = PureFunctionDecl::new(name, params, Some(body));
    d.domain = f.dims.iter().map(|d| d.interval).collect();
    add_contract(&mut d, &s.annotations, &f.name, &canonical);
    d
}

/// Condition under which a stage writes the point named by the pure vars.
fn writes_point(s: &Stage, params: &[String], translate: &dyn Fn(&Expr) -> Expr) -> Expr {
    let mut conds = Vec::new();
    for (x, e) in params.iter().zip(&s.lhs) {
        if *e != var(x) {
            conds.push(Expr::eq(var(x), translate(e)));
        }
    }
    if let Some(g) = &s.guard {
        conds.push(translate(g));
    }
    Expr::and_all(conds)
}

/// Encodes an update stage without a reduction domain.
pub fn encode_update_stage(f: &Func, idx: usize, name: &str, prev: &str) -> PureFunctionDecl {
    let s = &f.stages[idx];
    let params = f.pure_vars();
    let canonical: Vec<Expr> = params.iter().map(var).collect();
    let prev_call = |args: Vec<Expr>| call(prev, args);
    let tr = |e: &Expr| to_pvl(e, &f.name, &canonical, &SelfRef::Call(&prev_call));
    let cond = writes_point(s, &params, &tr);
    let rhs = tr(&s.rhs);
    let body = if cond.is_true() { rhs } else { Expr::select(cond, rhs, call(prev, canonical.clone())) };
    let mut d = PureFunctionDecl::new(name, params, Some(body));
    d.domain = f.dims.iter().map(|d| d.interval).collect();
    add_contract(&mut d, &s.annotations, &f.name, &canonical);
    d
}

/// Encodes a reduction stage: the recursive functions (innermost variable
/// first) followed by the stage entry.
pub fn encode_reduction_stage(
    f: &Func,
    idx: usize,
    name: &str,
    rec: &[String],
    prev: &str,
) -> Result<Vec<PureFunctionDecl>, EncodeError> {
    let s = &f.stages[idx];
    let rd = s.rdom.as_ref().expect("reduction stage has a domain");
    let xs = f.pure_vars();
    let canonical: Vec<Expr> = xs.iter().map(var).collect();
    let k = rd.vars.len();
    let rn: Vec<&str> = rd.vars.iter().map(|v| v.name.as_str()).collect();
    let min = |j: usize| rd.vars[j].interval.min;
    let max = |j: usize| rd.vars[j].interval.max();
    // Call of the j-th recursive function with the given reduction values
    // for variables j..k.
    let rcall = |j: usize, rs: Vec<Expr>| {
        let mut args = canonical.clone();
        args.extend(rs);
        call(&rec[j], args)
    };
    let mut out = Vec::new();
    for j in 0..k {
        let v = &rd.vars[j];
        if v.invariants.is_empty() {
            return Err(EncodeError::MissingReductionInvariant { func: f.name.clone(), rvar: v.name.clone() });
        }
        let mut params = xs.clone();
        params.extend(rn[j..].iter().map(|r| r.to_string()));
        let own: Vec<Expr> = rn[j..].iter().map(|r| var(*r)).collect();
        let all_min = Expr::and_all((j..k).map(|l| Expr::eq(var(rn[l]), c(min(l)))));
        let at_min = Expr::eq(var(rn[j]), c(min(j)));
        let roll_back = if j + 1 < k {
            // Start of row j: the previous point ends the preceding row.
            let mut rs = own.clone();
            rs[0] = c(max(j));
            rs[1] = Expr::sub(var(rn[j + 1]), c(1));
            let same = rcall(j, rs);
            if j + 2 < k {
                Expr::select(Expr::eq(var(rn[j + 1]), c(min(j + 1))), rcall(j + 1, own[1..].to_vec()), same)
            } else {
                same
            }
        } else {
            Expr::Const(0)
        };
        let step = if j == 0 {
            let dec = |e: &Expr| e.substitute(rn[0], &Expr::sub(var(rn[0]), c(1)));
            let mut prev_r = own.clone();
            prev_r[0] = Expr::sub(var(rn[0]), c(1));
            let self_call = |args: Vec<Expr>| {
                let mut a = args;
                a.extend(prev_r.iter().cloned());
                call(&rec[0], a)
            };
            let tr = |e: &Expr| to_pvl(&dec(e), &f.name, &canonical, &SelfRef::Call(&self_call));
            let cond = writes_point(s, &xs, &tr);
            let rhs = tr(&s.rhs);
            let unchanged = rcall(0, prev_r.clone());
            if cond.is_true() {
                rhs
            } else {
                Expr::select(cond, rhs, unchanged)
            }
        } else {
            let mut rs = vec![c(max(j - 1)), Expr::sub(var(rn[j]), c(1))];
            rs.extend(own[1..].iter().cloned());
            rcall(j - 1, rs)
        };
        let body = if j + 1 < k {
            Expr::select(all_min, call(prev, canonical.clone()), Expr::select(at_min, roll_back, step))
        } else {
            Expr::select(all_min, call(prev, canonical.clone()), step)
        };
        let mut d = PureFunctionDecl::new(&rec[j], params, Some(body));
        d.domain = f.dims.iter().map(|d| d.interval).collect();
        d.domain.push(Interval::new(min(j), rd.vars[j].interval.extent + 1));
        d.domain.extend(rd.vars[j + 1..].iter().map(|v| v.interval));
        d.requires.push(range_requires(rn[j], min(j), max(j), true));
        for l in j + 1..k {
            d.requires.push(range_requires(rn[l], min(l), max(l), false));
        }
        for inv in &v.invariants {
            let mut body = inv.body.clone();
            for l in 0..j {
                body = body.substitute(rn[l], &c(min(l)));
            }
            d.ensures.push(to_pvl(&body, &f.name, &canonical, &SelfRef::Result));
        }
        d.decreases = Some(rn[j..].iter().rev().map(|r| r.to_string()).collect());
        out.push(d);
    }
    let mut entry = PureFunctionDecl::new(name, xs, Some(rcall(k - 1, vec![c(max(k - 1))])));
    entry.domain = f.dims.iter().map(|d| d.interval).collect();
    add_contract(&mut entry, &s.annotations, &f.name, &canonical);
    out.push(entry);
    Ok(out)
}

fn encode_func(f: &Func, used: &mut BTreeSet<String>) -> Result<Vec<PureFunctionDecl>, EncodeError> {
    let names = stage_names(f, used);
    let mut out = Vec::new();
    for (i, s) in f.stages.iter().enumerate() {
        let name = &names.stages[i];
        match s.kind {
            StageKind::Pure => out.push(encode_pure_stage(f, name)),
            StageKind::Update => out.push(encode_update_stage(f, i, name, &names.stages[i - 1])),
            StageKind::Reduction => {
                out.extend(encode_reduction_stage(f, i, name, &names.recursive[i], &names.stages[i - 1])?)
            }
        }
    }
    Ok(out)
}

/// The last function's final ensures, quantified over its domain.
pub fn autogen_pipeline_postcondition(p: &Pipeline) -> Result<Annotation, EncodeError> {
    let f = p.output_func();
    let last = f.stages.last().expect("function has a stage");
    let ens: Vec<Expr> = last.ensures().cloned().collect();
    if ens.is_empty() {
        return Err(EncodeError::NoIntermediateAnnotation(f.name.clone()));
    }
    let vars = f
        .dims
        .iter()
        .map(|d| {
            let b = |bound| Expr::BoundRef { entity: f.name.clone(), dim: d.name.clone(), bound };
            QVar::new(d.name.clone(), b(Bound::Min), b(Bound::Max))
        })
        .collect();
    Ok(Annotation::new(AnnotationKind::Ensures, Expr::forall(vars, Expr::and_all(ens), false)))
}

pub fn encode_pipeline_lemma(p: &Pipeline) -> PipelineLemma {
    let tr = |e: &Expr| to_pvl(e, "", &[], &SelfRef::Result);
    let mut lemma = PipelineLemma {
        requires: p.requires.iter().map(|a| tr(&a.body)).collect(),
        ensures: p.ensures.iter().map(|a| tr(&a.body)).collect(),
    };
    if lemma.ensures.is_empty() {
        if let Ok(a) = autogen_pipeline_postcondition(p) {
            lemma.ensures.push(tr(&a.body));
        }
    }
    lemma
}

fn referenced_bounds(p: &Pipeline) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut visit = |e: &Expr| {
        if let Expr::BoundRef { entity, .. } = e {
            out.insert(entity.clone());
        }
    };
    let anns = p.requires.iter().chain(&p.ensures).chain(p.inputs.iter().flat_map(|b| &b.requires));
    for a in anns {
        a.body.walk(&mut visit);
    }
    for f in &p.funcs {
        for s in &f.stages {
            s.rhs.walk(&mut visit);
            for e in s.lhs.iter().chain(&s.guard) {
                e.walk(&mut visit);
            }
            for a in &s.annotations {
                a.body.walk(&mut visit);
            }
            for v in s.rdom.iter().flat_map(|r| &r.vars) {
                for a in &v.invariants {
                    a.body.walk(&mut visit);
                }
            }
        }
    }
    out
}

/// Encodes the whole pipeline.
pub fn encode(p: &Pipeline) -> Result<EncodedProgram, EncodeError> {
    let mut used: BTreeSet<String> = p.inputs.iter().map(|b| b.name.clone()).collect();
    used.extend(p.funcs.iter().map(|f| f.name.clone()));
    let mut decls = Vec::new();
    for b in &p.inputs {
        decls.extend(encode_buffer(p, &b.name));
    }
    let mut bounded: Vec<&Func> = vec![p.output_func()];
    let refs = referenced_bounds(p);
    bounded.extend(p.funcs.iter().filter(|f| f.name != p.output && refs.contains(&f.name)));
    for f in bounded {
        decls.extend(bound_decls(&f.name, &f.dims));
    }
    for f in &p.funcs {
        decls.extend(encode_func(f, &mut used)?);
    }
    Ok(EncodedProgram { declarations: decls, lemma: encode_pipeline_lemma(p) })
}

/// Calls of `d` to itself found in `e`.
fn self_calls<'a>(d: &PureFunctionDecl, e: &'a Expr) -> Vec<&'a [Expr]> {
    let mut out = Vec::new();
    fn go<'a>(name: &str, e: &'a Expr, out: &mut Vec<&'a [Expr]>) {
        if let Expr::Call { name: n, args } = e {
            if n == name {
                out.push(args);
            }
        }
        for ch in e.children() {
            go(name, ch, out);
        }
    }
    go(&d.name, e, &mut out);
    out
}

/// Whether `arg` is syntactically smaller than the parameter `v`, or equal.
fn compare_arg(arg: &Expr, v: &str) -> Option<std::cmp::Ordering> {
    use std::cmp::Ordering::*;
    match arg {
        Expr::Var(n) if n == v => Some(Equal),
        Expr::Bin(crate::ir::BinOp::Sub, a, b) => match (&**a, b.as_const()) {
            (Expr::Var(n), Some(k)) if n == v && k > 0 => Some(Less),
            _ => None,
        },
        Expr::Bin(crate::ir::BinOp::Add, a, b) => match (&**a, b.as_const()) {
            (Expr::Var(n), Some(k)) if n == v && k < 0 => Some(Less),
            _ => None,
        },
        _ => None,
    }
}

/// Static termination check: every self-call must decrease the `decreases`
/// tuple lexicographically, judged syntactically. Guards are not consulted,
/// so a measure left unbounded below is still reported as decreasing; the
/// range requires of each recursive function supply that bound.
pub fn check_decreases(d: &PureFunctionDecl) -> Result<(), String> {
    let Some(body) = &d.body else { return Ok(()) };
    let calls = self_calls(d, body);
    if calls.is_empty() {
        return Ok(());
    }
    let measure = d.decreases.as_ref().filter(|m| !m.is_empty()).ok_or_else(|| format!("`{}` is recursive but has no measure", d.name))?;
    let pos: HashMap<&str, usize> = d.params.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    'calls: for args in calls {
        for m in measure {
            let i = *pos.get(m.as_str()).ok_or_else(|| format!("measure `{m}` is not a parameter of `{}`", d.name))?;
            match compare_arg(&args[i], m) {
                Some(std::cmp::Ordering::Less) => continue 'calls,
                Some(std::cmp::Ordering::Equal) => {}
                _ => {
                    let shown: Vec<String> = args.iter().map(|a| a.to_string()).collect();
                    return Err(format!("call {}({}) does not decrease `{m}`", d.name, shown.join(", ")));
                }
            }
        }
        return Err(format!("a call of `{}` repeats its measure", d.name));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_pipeline;

    const COUNT: &str = "pipeline count(inp[x in 0..count.x.max, y in 0..10]) -> count[x in 0..4] {
        rdom r in 0..10;
        count(x) = 0;
        count.ensures(count(x) == 0);
        count(x) = select(inp(x, r) > 0, count(x) + 1, count(x));
        count.invariant(r, 0 <= count(x) <= r);
        count.ensures(0 <= count(x) <= 10);
    }";

    #[test]
    fn count_names_and_entry() {
        let p = parse_pipeline(COUNT).unwrap();
        let e = encode(&p).unwrap();
        let names: Vec<&str> = e.declarations.iter().map(|d| d.name.as_str()).collect();
        assert!(names.contains(&"count0") && names.contains(&"count1r") && names.contains(&"count"));
        let entry = e.decl("count").unwrap();
        assert_eq!(entry.body.as_ref().unwrap().to_string(), "count1r(x, 10)");
        let rec = e.decl("count1r").unwrap();
        assert_eq!(rec.decreases, Some(vec!["r".to_string()]));
        assert!(rec.is_recursive());
        check_decreases(rec).unwrap();
    }

    #[test]
    fn update_stage_uses_point_condition() {
        let src = "pipeline u(inp[x in 0..4, y in 0..4]) -> f[x in 0..4, y in 0..4] { f(x, y) = x; f(x, 0) = f(x, 0) + 1; }";
        let p = parse_pipeline(src).unwrap();
        let e = encode(&p).unwrap();
        let f = e.decl("f").unwrap();
        assert_eq!(crate::print_expr(f.body.as_ref().unwrap(), crate::Syntax::Pvl), "y == 0 ? f0(x, 0) + 1 : f0(x, y)");
    }

    #[test]
    fn missing_invariant_is_an_error() {
        let src = "pipeline m(inp[x in 0..4]) -> f[x in 0..1] { rdom r in 0..4; f(x) = 0; f(x) = f(x) + inp(r); }";
        let p = parse_pipeline(src).unwrap();
        assert!(matches!(encode(&p), Err(EncodeError::MissingReductionInvariant { .. })));
    }

    #[test]
    fn decreases_check_rejects_growing_calls() {
        let mut d = PureFunctionDecl::new("g", vec!["r".into()], Some(call("g", vec![Expr::add(var("r"), c(1))])));
        d.decreases = Some(vec!["r".into()]);
        assert!(check_decreases(&d).is_err());
    }

    #[test]
    fn autogen_needs_an_ensures() {
        let src = "pipeline a(inp[x in 0..4]) -> f[x in 0..4] { f(x) = inp(x); }";
        let p = parse_pipeline(src).unwrap();
        assert!(autogen_pipeline_postcondition(&p).is_err());
        assert!(encode(&p).unwrap().lemma.ensures.is_empty());
    }
}
