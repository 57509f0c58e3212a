//! Interval arithmetic over integer expressions.
//!
//! Ranges here are inclusive `(lo, hi)` pairs, which is what the arithmetic
//! naturally produces; callers convert to half-open [`Interval`]s.

use super::arith::{hdiv, hmod};
use super::expr::{BinOp, Bound, Expr, UnOp};
use super::pipeline::{Interval, Pipeline};

pub type Range = (i64, i64);

pub fn hull(a: Range, b: Range) -> Range {
    (a.0.min(b.0), a.1.max(b.1))
}

pub fn to_interval(r: Range) -> Interval {
    Interval::from_bounds(r.0, r.1 + 1)
}

pub fn of_interval(i: &Interval) -> Option<Range> {
    if i.extent <= 0 {
        None
    } else {
        Some((i.min, i.max() - 1))
    }
}

/// Context for range evaluation: variable ranges and bound lookups.
pub trait RangeEnv {
    fn var(&self, name: &str) -> Option<Range>;
    fn bound(&self, entity: &str, dim: &str, bound: Bound) -> Option<i64>;
}

/// Variables from a closure, bounds from a pipeline.
pub struct PipelineEnv<'a, F: Fn(&str) -> Option<Range>> {
    pub pipeline: &'a Pipeline,
    pub vars: F,
}

impl<F: Fn(&str) -> Option<Range>> RangeEnv for PipelineEnv<'_, F> {
    fn var(&self, name: &str) -> Option<Range> {
        (self.vars)(name).or_else(|| self.pipeline.param(name).map(|v| (v, v)))
    }

    fn bound(&self, entity: &str, dim: &str, bound: Bound) -> Option<i64> {
        self.pipeline.bound_value(entity, dim, bound)
    }
}

/// Conservative range of an integer expression, or `None` when it depends
/// on data (function or buffer values) or on an unknown variable.
pub fn range_of(e: &Expr, env: &dyn RangeEnv) -> Option<Range> {
    Some(match e {
        Expr::Const(v) => (*v, *v),
        Expr::Var(v) => env.var(v)?,
        Expr::BoundRef { entity, dim, bound } => {
            let v = env.bound(entity, dim, *bound)?;
            (v, v)
        }
        Expr::Un(UnOp::Neg, a) => {
            let (lo, hi) = range_of(a, env)?;
            (hi.checked_neg()?, lo.checked_neg()?)
        }
        Expr::Un(UnOp::Not, _) => (0, 1),
        Expr::Min(a, b) => {
            let (a, b) = (range_of(a, env)?, range_of(b, env)?);
            (a.0.min(b.0), a.1.min(b.1))
        }
        Expr::Max(a, b) => {
            let (a, b) = (range_of(a, env)?, range_of(b, env)?);
            (a.0.max(b.0), a.1.max(b.1))
        }
        Expr::Select(_, t, f) => hull(range_of(t, env)?, range_of(f, env)?),
        Expr::Bin(op, a, b) => {
            if op.is_boolean() {
                return Some((0, 1));
            }
            let ra = range_of(a, env)?;
            let rb = range_of(b, env)?;
            match op {
                BinOp::Add => (ra.0.checked_add(rb.0)?, ra.1.checked_add(rb.1)?),
                BinOp::Sub => (ra.0.checked_sub(rb.1)?, ra.1.checked_sub(rb.0)?),
                BinOp::Mul => corners(ra, rb, |x, y| x.checked_mul(y))?,
                BinOp::Div | BinOp::TruncDiv => {
                    if rb.0 <= 0 && rb.1 >= 0 {
                        // The divisor range contains zero; x/0 == 0 and
                        // |x/y| <= |x| otherwise.
                        let m = ra.0.unsigned_abs().max(ra.1.unsigned_abs()) as i64;
                        (-m, m)
                    } else {
                        let f = |x: i64, y: i64| {
                            Some(if *op == BinOp::Div { hdiv(x, y) } else { x.checked_div(y)? })
                        };
                        // Monotone in each argument on a sign-definite divisor
                        // range, so the corners are the extremes.
                        corners(ra, rb, f)?
                    }
                }
                BinOp::Mod => {
                    if rb.0 == rb.1 && rb.0 != 0 {
                        let m = rb.0.abs();
                        if ra.0 >= 0 && ra.1 < m {
                            ra
                        } else if ra.1 - ra.0 < m && hmod(ra.0, m) <= hmod(ra.1, m) {
                            (hmod(ra.0, m), hmod(ra.1, m))
                        } else {
                            (0, m - 1)
                        }
                    } else {
                        let m = rb.0.unsigned_abs().max(rb.1.unsigned_abs()) as i64;
                        (0, (m - 1).max(0))
                    }
                }
                _ => unreachable!(),
            }
        }
        _ => return None,
    })
}

fn corners(a: Range, b: Range, f: impl Fn(i64, i64) -> Option<i64>) -> Option<Range> {
    let vals = [f(a.0, b.0)?, f(a.0, b.1)?, f(a.1, b.0)?, f(a.1, b.1)?];
    Some((*vals.iter().min().unwrap(), *vals.iter().max().unwrap()))
}

/// Evaluates an expression that must be constant under the pipeline's
/// parameters and bounds.
pub fn eval_const(e: &Expr, p: &Pipeline) -> Option<i64> {
    let env = PipelineEnv { pipeline: p, vars: |_: &str| None };
    match range_of(e, &env)? {
        (lo, hi) if lo == hi => Some(lo),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::expr::{c, var};

    struct Vars(Vec<(&'static str, Range)>);
    impl RangeEnv for Vars {
        fn var(&self, name: &str) -> Option<Range> {
            self.0.iter().find(|(n, _)| *n == name).map(|(_, r)| *r)
        }
        fn bound(&self, _: &str, _: &str, _: Bound) -> Option<i64> {
            None
        }
    }

    fn brute(e: &Expr, xs: Range) -> Range {
        let mut out = (i64::MAX, i64::MIN);
        for x in xs.0..=xs.1 {
            let v = eval(e, x);
            out = (out.0.min(v), out.1.max(v));
        }
        out
    }

    fn eval(e: &Expr, x: i64) -> i64 {
        match e {
            Expr::Const(v) => *v,
            Expr::Var(_) => x,
            Expr::Bin(op, a, b) => op.apply(eval(a, x), eval(b, x)).unwrap(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn ranges_contain_every_value() {
        let x = var("x");
        let cases = vec![
            Expr::bin(BinOp::Add, Expr::bin(BinOp::Mul, x.clone(), c(8)), c(2)),
            Expr::bin(BinOp::Div, x.clone(), c(3)),
            Expr::bin(BinOp::Mod, x.clone(), c(4)),
            Expr::bin(BinOp::Sub, c(5), Expr::bin(BinOp::Mul, x.clone(), c(-2))),
        ];
        for e in &cases {
            for xs in [(-7, 9), (0, 3), (4, 6)] {
                let env = Vars(vec![("x", xs)]);
                let r = range_of(e, &env).unwrap();
                let b = brute(e, xs);
                assert!(r.0 <= b.0 && b.1 <= r.1, "{e}: {r:?} does not cover {b:?}");
            }
        }
    }

    #[test]
    fn affine_ranges_are_exact() {
        let e = Expr::bin(BinOp::Add, Expr::bin(BinOp::Mul, var("yo"), c(8)), var("yi"));
        let env = Vars(vec![("yo", (0, 127)), ("yi", (0, 7))]);
        assert_eq!(range_of(&e, &env), Some((0, 1023)));
    }

    #[test]
    fn data_dependent_is_unknown() {
        let e = Expr::Func { name: "f".into(), args: vec![var("x")] };
        assert_eq!(range_of(&e, &Vars(vec![("x", (0, 1))])), None);
    }
}
