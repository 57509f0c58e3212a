use std::collections::HashMap;
use std::time::Instant;

use super::{points, reference::eval_reference, CheckReport, Finding, FindingKind, Valuation};
use crate::eval::{compile, Code, EvalError, Host, Machine, Resolver, Scope, RESULT};
use crate::frontend::{check_decreases, EncodedProgram, PureFunctionDecl};
use crate::ir::{Bound, Expr, Pipeline};

/// Recursion deeper than this is reported as non-terminating.
const MAX_DEPTH: usize = 20_000;

struct Compiled {
    name: String,
    body: Option<Code>,
    requires: Vec<Code>,
    ensures: Vec<Code>,
    measure: Vec<usize>,
}

struct DeclNames<'a> {
    prog: &'a EncodedProgram,
    index: HashMap<&'a str, usize>,
    p: &'a Pipeline,
}

impl Resolver for DeclNames<'_> {
    fn leaf(&mut self, e: &Expr) -> Option<u32> {
        match e {
            Expr::Call { name, .. } => self.index.get(name.as_str()).map(|i| *i as u32),
            _ => None,
        }
    }

    fn bound(&self, entity: &str, dim: &str, bound: Bound) -> Option<i64> {
        let name = format!("{entity}_{dim}_{bound}");
        match self.prog.decl(&name).and_then(|d| d.body.as_ref()) {
            Some(Expr::Const(v)) => Some(*v),
            _ => self.p.bound_value(entity, dim, bound),
        }
    }
}

fn compile_decl(d: &PureFunctionDecl, names: &mut DeclNames<'_>) -> Result<Compiled, Finding> {
    let mut scope = Scope::new(d.params.iter().map(String::as_str).chain([RESULT]));
    let err = |e: crate::eval::CompileError| Finding::new(FindingKind::Mismatch, format!("{}: {e}", d.name));
    let mut all = |es: &[Expr], scope: &mut Scope| -> Result<Vec<Code>, Finding> {
        es.iter().map(|e| compile(e, scope, names).map_err(err)).collect()
    };
    let requires = all(&d.requires, &mut scope)?;
    let ensures = all(&d.ensures, &mut scope)?;
    let body = d.body.as_ref().map(|b| compile(b, &mut scope, names).map_err(err)).transpose()?;
    let measure = d
        .decreases
        .iter()
        .flatten()
        .filter_map(|m| d.params.iter().position(|p| p == m))
        .collect();
    Ok(Compiled { name: d.name.clone(), body, requires, ensures, measure })
}

struct FeHost<'a> {
    decls: &'a [Compiled],
    v: &'a Valuation,
    memo: Vec<HashMap<Vec<i64>, i64>>,
    /// Active calls, for the runtime termination check.
    stack: Vec<(usize, Vec<i64>)>,
    findings: Vec<Finding>,
    reported: Vec<bool>,
    instantiations: u64,
}

impl FeHost<'_> {
    fn report_once(&mut self, id: usize, f: Finding) {
        if !self.reported[id] {
            self.reported[id] = true;
            self.findings.push(f);
        }
    }

    fn holds(&mut self, codes_of: fn(&Compiled) -> &Vec<Code>, id: usize, slots: Vec<i64>) -> Result<bool, EvalError> {
        let decls = self.decls;
        let mut m = Machine::with_slots(slots);
        for c in codes_of(&decls[id]) {
            if !m.truth(c, self)? {
                self.instantiations += m.instantiations;
                return Ok(false);
            }
        }
        self.instantiations += m.instantiations;
        Ok(true)
    }

    fn measure(&self, id: usize, args: &[i64]) -> Vec<i64> {
        self.decls[id].measure.iter().map(|&i| args[i]).collect()
    }
}

impl Host for FeHost<'_> {
    fn access(&mut self, id: u32, args: &[i64]) -> Result<i64, EvalError> {
        let id = id as usize;
        if let Some(v) = self.memo[id].get(args) {
            return Ok(*v);
        }
        let decls = self.decls;
        let d = &decls[id];
        let Some(body) = &d.body else {
            let t = self.v.buffers.get(&d.name).ok_or_else(|| EvalError::OutOfBounds {
                target: d.name.clone(),
                index: args.to_vec(),
            })?;
            return match t.get(args) {
                Some(Some(v)) => Ok(v),
                _ => Err(EvalError::OutOfBounds { target: d.name.clone(), index: args.to_vec() }),
            };
        };
        let mut slots = args.to_vec();
        slots.push(0);
        if !self.holds(|c| &c.requires, id, slots.clone())? {
            self.report_once(
                id,
                Finding::new(FindingKind::PreconditionViolation, format!("call {}{args:?} violates its requires", d.name)),
            );
        }
        let m_new = self.measure(id, args);
        if let Some((_, prev)) = self.stack.iter().rev().find(|(i, _)| *i == id) {
            if d.measure.is_empty() || m_new >= *prev {
                return Err(EvalError::Termination(d.name.clone()));
            }
        }
        if self.stack.len() > MAX_DEPTH {
            return Err(EvalError::Termination(d.name.clone()));
        }
        self.stack.push((id, m_new));
        let mut m = Machine::with_slots(slots.clone());
        let r = m.run(body, self);
        self.instantiations += m.instantiations;
        self.stack.pop();
        let r = r?;
        *slots.last_mut().unwrap() = r;
        if !self.holds(|c| &c.ensures, id, slots)? {
            self.report_once(
                id,
                Finding::new(
                    FindingKind::InvariantViolation,
                    format!("ensures of {} fails at {args:?} (result {r})", d.name),
                ),
            );
        }
        self.memo[id].insert(args.to_vec(), r);
        Ok(r)
    }
}

/// Evaluates every encoded function over its domain, checking contracts,
/// termination and agreement with the reference semantics.
pub fn check_frontend(prog: &EncodedProgram, p: &Pipeline, v: &Valuation) -> CheckReport {
    let start = Instant::now();
    let mut report = CheckReport::new(&p.name, None, v.seed);
    for d in prog.declarations.iter().filter(|d| d.is_recursive()) {
        if let Err(msg) = check_decreases(d) {
            report.push(Finding::new(FindingKind::Termination, msg));
        }
    }
    let index = prog.declarations.iter().enumerate().map(|(i, d)| (d.name.as_str(), i)).collect();
    let mut names = DeclNames { prog, index, p };
    let mut decls = Vec::new();
    for d in &prog.declarations {
        match compile_decl(d, &mut names) {
            Ok(c) => decls.push(c),
            Err(f) => {
                report.push(f);
                return report;
            }
        }
    }
    let n = decls.len();
    let mut host = FeHost {
        decls: &decls,
        v,
        memo: vec![HashMap::new(); n],
        stack: Vec::new(),
        findings: Vec::new(),
        reported: vec![false; n],
        instantiations: 0,
    };
    // Lemma preconditions are assumptions about the input.
    let mut lemma_codes = |es: &[Expr]| -> Vec<Code> {
        es.iter().filter_map(|e| compile(e, &mut Scope::default(), &mut names).ok()).collect()
    };
    let lemma_req = lemma_codes(&prog.lemma.requires);
    let lemma_ens = lemma_codes(&prog.lemma.ensures);
    for c in &lemma_req {
        let mut m = Machine::default();
        match m.truth(c, &mut host) {
            Ok(true) => {}
            Ok(false) => report.push(Finding::new(FindingKind::PreconditionViolation, "input violates the pipeline requires")),
            Err(e) => report.push(e.into()),
        }
    }
    for (id, d) in prog.declarations.iter().enumerate() {
        if d.params.is_empty() || d.body.is_none() {
            continue;
        }
        for pt in points(&d.domain) {
            let mut slots = pt.clone();
            slots.push(0);
            match host.holds(|c| &c.requires, id, slots) {
                Ok(true) => {}
                Ok(false) => continue,
                Err(e) => {
                    report.push(e.into());
                    break;
                }
            }
            if let Err(e) = host.access(id as u32, &pt) {
                report.push(Finding::from(e));
                break;
            }
        }
    }
    for c in &lemma_ens {
        let mut m = Machine::default();
        match m.truth(c, &mut host) {
            Ok(true) => {}
            Ok(false) => report.push(Finding::new(FindingKind::InvariantViolation, "pipeline ensures does not hold")),
            Err(e) => report.push(e.into()),
        }
        host.instantiations += m.instantiations;
    }
    match (eval_reference(p, v), prog.declarations.iter().position(|d| d.name == p.output)) {
        (Ok(want), Some(id)) => {
            for pt in want.points() {
                let expect = want.get(&pt).flatten();
                match host.access(id as u32, &pt) {
                    Ok(got) if Some(got) == expect => {}
                    Ok(got) => {
                        report.push(Finding::new(
                            FindingKind::Mismatch,
                            format!("{}{pt:?}: encoded {got}, reference {expect:?}", p.output),
                        ));
                        break;
                    }
                    Err(e) => {
                        report.push(e.into());
                        break;
                    }
                }
            }
        }
        (Err(f), _) => report.push(f),
        (_, None) => report.push(Finding::new(FindingKind::Mismatch, "output function is not encoded")),
    }
    let findings = std::mem::take(&mut host.findings);
    report.stats.points = host.memo.iter().map(|m| m.len() as u64).sum();
    report.stats.instantiations = host.instantiations;
    for f in findings {
        report.push(f);
    }
    report.stats.millis = start.elapsed().as_millis() as u64;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::encode;
    use crate::parse::parse_pipeline;

    const COUNT: &str = "pipeline count(inp[x in 0..count.x.max, y in 0..10]) -> count[x in 0..8] {
        rdom r in 0..10;
        count(x) = 0;
        count.ensures(count(x) == 0);
        count(x) = select(inp(x, r) > 0, count(x) + 1, count(x));
        count.invariant(r, 0 <= count(x) <= r);
        count.ensures(0 <= count(x) <= 10);
    }";

    #[test]
    fn count_encoding_checks() {
        let p = parse_pipeline(COUNT).unwrap();
        let e = encode(&p).unwrap();
        for seed in 0..5 {
            let r = check_frontend(&e, &p, &Valuation::random(&p, seed));
            assert!(r.passed(), "{:?}", r.findings);
        }
    }

    #[test]
    fn tightened_invariant_is_caught() {
        let src = COUNT.replace("0 <= count(x) <= r", "0 <= count(x) && count(x) < r");
        let p = parse_pipeline(&src).unwrap();
        let e = encode(&p).unwrap();
        let r = check_frontend(&e, &p, &Valuation::random(&p, 1));
        assert!(r.has(FindingKind::InvariantViolation));
    }
}
