use std::collections::BTreeMap;

use super::{points, Finding, FindingKind, Table, Valuation};
use crate::eval::{compile, EvalError, Host, Machine, Resolver, Scope};
use crate::ir::{Bound, Expr, Func, Interval, Pipeline, Stage};

struct Names<'a> {
    p: &'a Pipeline,
}

impl Resolver for Names<'_> {
    fn leaf(&mut self, e: &Expr) -> Option<u32> {
        match e {
            Expr::Func { name, .. } => self.p.func_index(name).map(|i| i as u32),
            Expr::Buffer { name, .. } => {
                let i = self.p.inputs.iter().position(|b| &b.name == name)?;
                Some((self.p.funcs.len() + i) as u32)
            }
            _ => None,
        }
    }

    fn bound(&self, entity: &str, dim: &str, bound: Bound) -> Option<i64> {
        self.p.bound_value(entity, dim, bound)
    }
}

struct RefHost<'a> {
    p: &'a Pipeline,
    v: &'a Valuation,
    done: &'a [Table],
    current: &'a mut Table,
}

fn lookup(t: &Table, name: &str, args: &[i64]) -> Result<i64, EvalError> {
    match t.get(args) {
        Some(Some(v)) => Ok(v),
        Some(None) => Err(EvalError::Uninitialized { target: name.to_string(), index: args.to_vec() }),
        None => Err(EvalError::OutOfBounds { target: name.to_string(), index: args.to_vec() }),
    }
}

impl Host for RefHost<'_> {
    fn access(&mut self, id: u32, args: &[i64]) -> Result<i64, EvalError> {
        let id = id as usize;
        let n = self.p.funcs.len();
        if id >= n {
            let b = &self.p.inputs[id - n];
            return lookup(&self.v.buffers[&b.name], &b.name, args);
        }
        let name = &self.p.funcs[id].name;
        if id == self.done.len() {
            lookup(self.current, name, args)
        } else {
            lookup(&self.done[id], name, args)
        }
    }
}

/// Loop variables of a stage, outermost first: pure variables that appear
/// bare in the left-hand side, then reduction variables from the outermost
/// to the innermost.
pub(crate) fn stage_loops(f: &Func, s: &Stage) -> Vec<(String, Interval)> {
    let mut out: Vec<(String, Interval)> = Vec::new();
    for (i, d) in f.dims.iter().enumerate().rev() {
        if s.lhs.get(i) == Some(&Expr::Var(d.name.clone())) {
            out.push((d.name.clone(), d.interval));
        }
    }
    if let Some(rd) = &s.rdom {
        for v in rd.vars.iter().rev() {
            out.push((v.name.clone(), v.interval));
        }
    }
    out
}

/// Evaluates every function of the pipeline over its realized domain,
/// stage after stage, reductions with the innermost variable fastest.
pub fn eval_all(p: &Pipeline, v: &Valuation) -> Result<BTreeMap<String, Table>, Finding> {
    let mut done: Vec<Table> = Vec::new();
    for f in &p.funcs {
        let mut table = Table::new(f.dims.iter().map(|d| d.interval).collect());
        for s in &f.stages {
            let loops = stage_loops(f, s);
            let mut scope = Scope::new(loops.iter().map(|(n, _)| n.clone()));
            let mut names = Names { p };
            let cerr = |e: crate::eval::CompileError| Finding::new(FindingKind::Mismatch, e.to_string()).at(&s.span);
            let rhs = compile(&s.rhs, &mut scope, &mut names).map_err(cerr)?;
            let lhs = s
                .lhs
                .iter()
                .map(|a| compile(a, &mut scope, &mut names))
                .collect::<Result<Vec<_>, _>>()
                .map_err(cerr)?;
            let guard = s.guard.as_ref().map(|g| compile(g, &mut scope, &mut names)).transpose().map_err(cerr)?;
            // Loops are listed outermost first; `points` varies the first
            // entry fastest, so iterate over the reversed list.
            let dims: Vec<Interval> = loops.iter().rev().map(|(_, i)| *i).collect();
            for pt in points(&dims) {
                let slots: Vec<i64> = pt.into_iter().rev().collect();
                let mut m = Machine::with_slots(slots);
                let mut host = RefHost { p, v, done: &done, current: &mut table };
                let wrap = |e: EvalError| Finding::from(e).at(&s.span);
                if let Some(g) = &guard {
                    if !m.truth(g, &mut host).map_err(wrap)? {
                        continue;
                    }
                }
                let val = m.run(&rhs, &mut host).map_err(wrap)?;
                let idx: Vec<i64> = lhs.iter().map(|a| m.run(a, &mut host)).collect::<Result<_, _>>().map_err(wrap)?;
                match table.index(&idx) {
                    Some(i) => table.data[i] = Some(val),
                    None => {
                        return Err(Finding::new(
                            FindingKind::OutOfBounds,
                            format!("`{}` written outside its domain at {idx:?}", f.name),
                        )
                        .at(&s.span))
                    }
                }
            }
        }
        done.push(table);
    }
    Ok(p.funcs.iter().map(|f| f.name.clone()).zip(done).collect())
}

/// Reference semantics of the pipeline: the output function's values.
pub fn eval_reference(p: &Pipeline, v: &Valuation) -> Result<Table, Finding> {
    let mut all = eval_all(p, v)?;
    Ok(all.remove(&p.output).expect("output is a function"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_pipeline;

    const BLUR: &str = "pipeline blur(inp[x in 0..blur_y.x.max + 2, y in 0..blur_y.y.max + 2]) -> blur_y[x in 0..8, y in 0..8] {
        blur_x(x, y) = (inp(x, y) + inp(x + 1, y) + inp(x + 2, y)) / 3;
        blur_y(x, y) = (blur_x(x, y) + blur_x(x, y + 1) + blur_x(x, y + 2)) / 3;
    }";

    #[test]
    fn blur_of_a_ramp_shifts_by_one() {
        let p = parse_pipeline(BLUR).unwrap();
        let v = Valuation::from_fn(&p, |_, pt| pt[0]);
        let out = eval_reference(&p, &v).unwrap();
        for pt in out.points() {
            assert_eq!(out.get(&pt), Some(Some(pt[0] + 1)));
        }
    }

    const COUNT: &str = "pipeline count(inp[x in 0..count.x.max, y in 0..10]) -> count[x in 0..6] {
        rdom r in 0..10;
        count(x) = 0;
        count(x) = select(inp(x, r) > 0, count(x) + 1, count(x));
    }";

    #[test]
    fn count_of_constant_rows() {
        let p = parse_pipeline(COUNT).unwrap();
        for (fill, want) in [(1, 10), (0, 0)] {
            let v = Valuation::from_fn(&p, |_, _| fill);
            let out = eval_reference(&p, &v).unwrap();
            assert!(out.data.iter().all(|x| *x == Some(want)));
        }
    }

    #[test]
    fn count_matches_brute_force() {
        let p = parse_pipeline(COUNT).unwrap();
        let v = Valuation::random(&p, 7);
        let out = eval_reference(&p, &v).unwrap();
        let inp = &v.buffers["inp"];
        for x in 0..6 {
            let want = (0..10).filter(|&r| inp.get(&[x, r]).unwrap().unwrap() > 0).count() as i64;
            assert_eq!(out.get(&[x]), Some(Some(want)));
        }
    }
}
