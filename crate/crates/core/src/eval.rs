//! Expressions compiled to a slot-addressed tree and evaluated over concrete
//! integers. Every interpreter in the crate (reference semantics, encoded
//! pure functions, lowered loop nests, annotation checks) goes through here.

use thiserror::Error;

use crate::ir::{BinOp, Bound, Expr, Fraction, UnOp};

/// Upper limit on quantifier instantiations for a single annotation.
pub const QUANTIFIER_LIMIT: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("int32 overflow evaluating {0}")]
    Overflow(String),
    #[error("`{target}` accessed out of bounds at {index:?}")]
    OutOfBounds { target: String, index: Vec<i64> },
    #[error("no permission to access `{target}` at {index:?}")]
    PermissionDenied { target: String, index: Vec<i64> },
    #[error("read of uninitialized `{target}` at {index:?}")]
    Uninitialized { target: String, index: Vec<i64> },
    #[error("quantifier instantiations exceed {QUANTIFIER_LIMIT}")]
    QuantifierLimit,
    #[error("`{0}` recursion does not decrease its measure")]
    Termination(String),
    #[error("precondition of `{0}` does not hold")]
    Precondition(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("unbound variable `{0}`")]
    UnboundVar(String),
    #[error("cannot evaluate `{0}` here")]
    Unsupported(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Code {
    Const(i64),
    Slot(usize),
    Bin(BinOp, Box<Code>, Box<Code>),
    Neg(Box<Code>),
    Not(Box<Code>),
    Select(Box<Code>, Box<Code>, Box<Code>),
    Min(Box<Code>, Box<Code>),
    Max(Box<Code>, Box<Code>),
    Access(u32, Vec<Code>),
    Forall { first: usize, ranges: Vec<(Code, Code)>, body: Box<Code> },
    Perm(u32, Vec<Code>, Fraction),
}

/// Maps the leaves of an expression to host-defined ids.
pub trait Resolver {
    /// Id for an access node (`Func`, `Buffer`, `Call`, `Load` or `InputAbs`).
    fn leaf(&mut self, e: &Expr) -> Option<u32>;
    fn bound(&self, entity: &str, dim: &str, bound: Bound) -> Option<i64>;
}

/// Runtime side of evaluation.
pub trait Host {
    fn access(&mut self, id: u32, args: &[i64]) -> Result<i64, EvalError>;

    /// Whether the permission is held. Hosts that do not track permissions
    /// treat every permission as held.
    fn perm(&mut self, _id: u32, _args: &[i64], _fraction: Fraction) -> Result<bool, EvalError> {
        Ok(true)
    }
}

/// Variable names visible to compiled code, one slot each. `\result` is an
/// ordinary name here.
#[derive(Clone, Debug, Default)]
pub struct Scope {
    names: Vec<String>,
}

pub const RESULT: &str = "\\result";

impl Scope {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Scope { names: names.into_iter().map(Into::into).collect() }
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().rposition(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn truncate(&mut self, len: usize) {
        self.names.truncate(len);
    }

    pub fn push(&mut self, name: impl Into<String>) -> usize {
        self.names.push(name.into());
        self.names.len() - 1
    }
}

fn leaf_args(e: &Expr) -> Option<Vec<&Expr>> {
    match e {
        Expr::Func { args, .. } | Expr::Buffer { args, .. } | Expr::Call { args, .. } => Some(args.iter().collect()),
        Expr::Load { index, .. } | Expr::InputAbs { index, .. } => Some(vec![index]),
        _ => None,
    }
}

pub fn compile(e: &Expr, scope: &mut Scope, r: &mut dyn Resolver) -> Result<Code, CompileError> {
    let b = |c: Code| Box::new(c);
    Ok(match e {
        Expr::Const(v) => Code::Const(*v),
        Expr::Var(n) => Code::Slot(scope.slot(n).ok_or_else(|| CompileError::UnboundVar(n.clone()))?),
        Expr::Result => Code::Slot(scope.slot(RESULT).ok_or_else(|| CompileError::UnboundVar(RESULT.into()))?),
        Expr::Func { .. } | Expr::Buffer { .. } | Expr::Call { .. } | Expr::Load { .. } | Expr::InputAbs { .. } => {
            let id = r.leaf(e).ok_or_else(|| CompileError::Unsupported(e.to_string()))?;
            let args = leaf_args(e).unwrap_or_default();
            let args = args.into_iter().map(|a| compile(a, scope, r)).collect::<Result<_, _>>()?;
            Code::Access(id, args)
        }
        Expr::Bin(op, x, y) => Code::Bin(*op, b(compile(x, scope, r)?), b(compile(y, scope, r)?)),
        Expr::Un(UnOp::Neg, x) => Code::Neg(b(compile(x, scope, r)?)),
        Expr::Un(UnOp::Not, x) => Code::Not(b(compile(x, scope, r)?)),
        Expr::Select(c, t, f) => Code::Select(
            b(compile(c, scope, r)?),
            b(compile(t, scope, r)?),
            b(compile(f, scope, r)?),
        ),
        Expr::Min(x, y) => Code::Min(b(compile(x, scope, r)?), b(compile(y, scope, r)?)),
        Expr::Max(x, y) => Code::Max(b(compile(x, scope, r)?), b(compile(y, scope, r)?)),
        Expr::BoundRef { entity, dim, bound } => Code::Const(
            r.bound(entity, dim, *bound).ok_or_else(|| CompileError::Unsupported(e.to_string()))?,
        ),
        Expr::Forall { vars, body, .. } => {
            let first = scope.len();
            let mut ranges = Vec::new();
            for q in vars {
                // Each range sees the variables quantified before it.
                let lo = compile(&q.lo, scope, r)?;
                let hi = compile(&q.hi, scope, r)?;
                ranges.push((lo, hi));
                scope.push(q.name.clone());
            }
            let body = compile(body, scope, r);
            scope.names.truncate(first);
            Code::Forall { first, ranges, body: b(body?) }
        }
        Expr::Perm { location, fraction } => {
            let id = r.leaf(location).ok_or_else(|| CompileError::Unsupported(location.to_string()))?;
            let args = leaf_args(location).unwrap_or_default();
            let args = args.into_iter().map(|a| compile(a, scope, r)).collect::<Result<_, _>>()?;
            Code::Perm(id, args, *fraction)
        }
    })
}

fn fits(v: i64) -> bool {
    v >= i32::MIN as i64 && v <= i32::MAX as i64
}

/// Evaluation state: variable slots plus the quantifier budget.
#[derive(Clone, Debug)]
pub struct Machine {
    pub slots: Vec<i64>,
    pub instantiations: u64,
    pub limit: u64,
}

impl Default for Machine {
    fn default() -> Self {
        Machine { slots: Vec::new(), instantiations: 0, limit: QUANTIFIER_LIMIT }
    }
}

impl Machine {
    pub fn with_slots(slots: Vec<i64>) -> Self {
        Machine { slots, ..Default::default() }
    }

    pub fn truth(&mut self, c: &Code, host: &mut dyn Host) -> Result<bool, EvalError> {
        Ok(self.run(c, host)? != 0)
    }

    pub fn run(&mut self, c: &Code, host: &mut dyn Host) -> Result<i64, EvalError> {
        match c {
            Code::Const(v) => Ok(*v),
            Code::Slot(i) => Ok(self.slots[*i]),
            Code::Bin(op, a, b) => {
                let x = self.run(a, host)?;
                match op {
                    BinOp::And if x == 0 => return Ok(0),
                    BinOp::Or if x != 0 => return Ok(1),
                    BinOp::Implies if x == 0 => return Ok(1),
                    _ => {}
                }
                let y = self.run(b, host)?;
                match op.apply(x, y) {
                    Some(v) if fits(v) => Ok(v),
                    _ => Err(EvalError::Overflow(format!("{x} {op:?} {y}"))),
                }
            }
            Code::Neg(a) => {
                let v = -self.run(a, host)?;
                if fits(v) {
                    Ok(v)
                } else {
                    Err(EvalError::Overflow(format!("-({})", -v)))
                }
            }
            Code::Not(a) => Ok((self.run(a, host)? == 0) as i64),
            Code::Select(cnd, t, f) => {
                if self.run(cnd, host)? != 0 {
                    self.run(t, host)
                } else {
                    self.run(f, host)
                }
            }
            Code::Min(a, b) => Ok(self.run(a, host)?.min(self.run(b, host)?)),
            Code::Max(a, b) => Ok(self.run(a, host)?.max(self.run(b, host)?)),
            Code::Access(id, args) if args.len() <= 4 => {
                let mut buf = [0i64; 4];
                for (slot, a) in buf.iter_mut().zip(args) {
                    *slot = self.run(a, host)?;
                }
                host.access(*id, &buf[..args.len()])
            }
            Code::Access(id, args) => {
                let vals = self.args(args, host)?;
                host.access(*id, &vals)
            }
            Code::Perm(id, args, f) => {
                let vals = self.args(args, host)?;
                Ok(host.perm(*id, &vals, *f)? as i64)
            }
            Code::Forall { first, ranges, body } => {
                if self.slots.len() < first + ranges.len() {
                    self.slots.resize(first + ranges.len(), 0);
                }
                Ok(self.forall(*first, ranges, body, host)? as i64)
            }
        }
    }

    fn args(&mut self, args: &[Code], host: &mut dyn Host) -> Result<Vec<i64>, EvalError> {
        args.iter().map(|a| self.run(a, host)).collect()
    }

    fn forall(&mut self, slot: usize, ranges: &[(Code, Code)], body: &Code, host: &mut dyn Host) -> Result<bool, EvalError> {
        let Some(((lo, hi), rest)) = ranges.split_first() else {
            self.instantiations += 1;
            if self.instantiations > self.limit {
                return Err(EvalError::QuantifierLimit);
            }
            return self.truth(body, host);
        };
        let (lo, hi) = (self.run(lo, host)?, self.run(hi, host)?);
        for v in lo..hi {
            self.slots[slot] = v;
            if !self.forall(slot + 1, rest, body, host)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Evaluates a closed arithmetic expression over named variables; accesses
/// are unsupported. Mostly for tests and constant folding.
pub fn eval_with(e: &Expr, vars: &[(&str, i64)]) -> Result<i64, String> {
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
        fn access(&mut self, _: u32, _: &[i64]) -> Result<i64, EvalError> {
            unreachable!("no leaves are compiled")
        }
    }
    let mut scope = Scope::new(vars.iter().map(|(n, _)| *n));
    let code = compile(e, &mut scope, &mut NoLeaves).map_err(|e| e.to_string())?;
    let mut m = Machine::with_slots(vars.iter().map(|(_, v)| *v).collect());
    m.run(&code, &mut NoLeaves).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{c, var, QVar};

    #[test]
    fn arithmetic_uses_euclidean_division() {
        let e = Expr::div(var("x"), c(3));
        assert_eq!(eval_with(&e, &[("x", -7)]), Ok(-3));
        let e = Expr::rem(var("x"), c(3));
        assert_eq!(eval_with(&e, &[("x", -7)]), Ok(2));
    }

    #[test]
    fn overflow_is_reported() {
        let e = Expr::bin(BinOp::Mul, var("x"), var("x"));
        assert!(eval_with(&e, &[("x", 1 << 20)]).is_err());
    }

    #[test]
    fn quantifiers_enumerate_dependent_ranges() {
        // forall i in 0..4, j in 0..i : j < i
        let body = Expr::lt(var("j"), var("i"));
        let q = Expr::forall(vec![QVar::new("i", c(0), c(4)), QVar::new("j", c(0), var("i"))], body, false);
        assert_eq!(eval_with(&q, &[]), Ok(1));
        let q = Expr::forall(vec![QVar::new("i", c(0), c(4))], Expr::lt(var("i"), c(3)), false);
        assert_eq!(eval_with(&q, &[]), Ok(0));
    }

    #[test]
    fn short_circuit_skips_division_overflow() {
        let bad = Expr::bin(BinOp::Mul, c(1 << 30), c(4));
        let e = Expr::bin(BinOp::Implies, Expr::eq(c(0), c(1)), Expr::eq(bad, c(0)));
        assert_eq!(eval_with(&e, &[]), Ok(1));
    }
}
