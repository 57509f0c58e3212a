//! Concrete domain resolution: input buffer bounds and the regions over
//! which intermediate functions are realized.

use std::collections::HashMap;

use super::expr::Expr;
use super::pipeline::{Interval, Pipeline, Stage};
use super::range::{eval_const, hull, of_interval, range_of, to_interval, PipelineEnv, Range};
use super::validate::{Diagnostic, DiagnosticKind};

fn error(kind: DiagnosticKind, message: String) -> Diagnostic {
    Diagnostic { kind, message, span: None }
}

/// Resolves buffer bounds from their source expressions and infers every
/// intermediate function's domain from its consumers. The output function's
/// domain must already be set.
pub fn resolve_domains(p: &mut Pipeline) -> Result<(), Diagnostic> {
    for bi in 0..p.inputs.len() {
        let mut dims = Vec::new();
        for (d, (lo, hi)) in p.inputs[bi].dims.iter().zip(&p.inputs[bi].bound_exprs) {
            let (Some(lo), Some(hi)) = (eval_const(lo, p), eval_const(hi, p)) else {
                return Err(error(
                    DiagnosticKind::InvalidInterval,
                    format!("bounds of {}.{} are not constant", p.inputs[bi].name, d.name),
                ));
            };
            if hi < lo {
                return Err(error(
                    DiagnosticKind::InvalidInterval,
                    format!("dimension {}.{} has negative extent", p.inputs[bi].name, d.name),
                ));
            }
            dims.push(Interval::from_bounds(lo, hi));
        }
        for (d, iv) in p.inputs[bi].dims.iter_mut().zip(dims) {
            d.interval = iv;
        }
    }
    let n = p.funcs.len();
    for fi in (0..n.saturating_sub(1)).rev() {
        let name = p.funcs[fi].name.clone();
        let arity = p.funcs[fi].dims.len();
        let mut req: Vec<Option<Range>> = vec![None; arity];
        for g in &p.funcs[fi + 1..] {
            for s in &g.stages {
                let vars = stage_ranges(g.dims.iter().map(|d| (d.name.as_str(), d.interval)), s);
                accumulate(p, s, &name, &vars, &mut req)?;
            }
        }
        // Updates may touch points outside the consumed region; the realized
        // domain covers those as well.
        let f = &p.funcs[fi];
        let pure_ranges: Vec<Interval> =
            req.iter().map(|r| r.map(to_interval).unwrap_or_default()).collect();
        for s in f.stages.iter().skip(1) {
            let vars = stage_ranges(f.dims.iter().map(|d| d.name.as_str()).zip(pure_ranges.iter().copied()), s);
            let lhs = Expr::Func { name: name.clone(), args: s.lhs.clone() };
            let probe = Stage { rhs: lhs, ..s.clone() };
            accumulate(p, s, &name, &vars, &mut req)?;
            accumulate(p, &probe, &name, &vars, &mut req)?;
        }
        for (d, r) in p.funcs[fi].dims.iter_mut().zip(req) {
            d.interval = r.map(to_interval).unwrap_or_default();
        }
    }
    Ok(())
}

fn stage_ranges<'a>(
    pure: impl Iterator<Item = (&'a str, Interval)>,
    s: &Stage,
) -> HashMap<String, Range> {
    let mut vars: HashMap<String, Range> = HashMap::new();
    for (n, iv) in pure {
        if let Some(r) = of_interval(&iv) {
            vars.insert(n.to_string(), r);
        }
    }
    if let Some(rd) = &s.rdom {
        for v in &rd.vars {
            if let Some(r) = of_interval(&v.interval) {
                vars.insert(v.name.clone(), r);
            }
        }
    }
    vars
}

fn accumulate(
    p: &Pipeline,
    s: &Stage,
    name: &str,
    vars: &HashMap<String, Range>,
    req: &mut [Option<Range>],
) -> Result<(), Diagnostic> {
    let mut empty = false;
    // Variables over an empty range make the whole stage vacuous.
    for e in s.lhs.iter().chain(std::iter::once(&s.rhs)).chain(s.guard.iter()) {
        for v in e.free_vars() {
            if !vars.contains_key(&v) && p.param(&v).is_none() {
                empty = true;
            }
        }
    }
    if empty {
        return Ok(());
    }
    let env = PipelineEnv { pipeline: p, vars: |v: &str| vars.get(v).copied() };
    let mut failure = None;
    let mut visit = |e: &Expr| {
        if let Expr::Func { name: n, args } = e {
            if n == name {
                for (slot, a) in req.iter_mut().zip(args) {
                    match range_of(a, &env) {
                        Some(r) => *slot = Some(slot.map_or(r, |s| hull(s, r))),
                        None => failure = Some(a.clone()),
                    }
                }
            }
        }
    };
    for e in s.lhs.iter().chain(std::iter::once(&s.rhs)).chain(s.guard.iter()) {
        e.walk(&mut visit);
    }
    match failure {
        Some(a) => Err(error(
            DiagnosticKind::NonAffineAccess,
            format!("cannot bound the index `{a}` of `{name}`"),
        )),
        None => Ok(()),
    }
}

/// Sets the extent of output dimensions and reduction variables named in
/// `overrides`, then re-resolves every derived domain.
pub fn rescale(p: &mut Pipeline, overrides: &[(String, i64)]) -> Result<(), Diagnostic> {
    let out = p.output.clone();
    for (name, extent) in overrides {
        if *extent < 0 {
            return Err(error(DiagnosticKind::InvalidInterval, format!("negative extent for `{name}`")));
        }
        let mut hit = false;
        if let Some(f) = p.funcs.iter_mut().find(|f| f.name == out) {
            for d in f.dims.iter_mut().filter(|d| &d.name == name) {
                d.interval.extent = *extent;
                hit = true;
            }
        }
        let rdoms = p.rdoms.iter_mut().flat_map(|r| r.vars.iter_mut());
        let stage_rdoms = p
            .funcs
            .iter_mut()
            .flat_map(|f| f.stages.iter_mut())
            .filter_map(|s| s.rdom.as_mut())
            .flat_map(|r| r.vars.iter_mut());
        for v in rdoms.chain(stage_rdoms).filter(|v| &v.name == name) {
            v.interval.extent = *extent;
            hit = true;
        }
        if !hit {
            return Err(error(DiagnosticKind::UnknownName, format!("nothing named `{name}` can be rescaled")));
        }
    }
    resolve_domains(p)
}
