use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_rational::Ratio;

use super::arith::{hdiv, hmod, trunc_div};

/// Exact permission fraction in `(0, 1]`.
pub type Fraction = Ratio<i64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    /// Euclidean division (`hdiv`).
    Div,
    /// Euclidean remainder (`hmod`).
    Mod,
    /// C-style truncating division. Never produced by the parser.
    TruncDiv,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
    Implies,
}

impl BinOp {
    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne)
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or | BinOp::Implies)
    }

    pub fn is_boolean(self) -> bool {
        self.is_comparison() || self.is_logical()
    }

    /// Applies the operator to two values; `None` on overflow.
    pub fn apply(self, a: i64, b: i64) -> Option<i64> {
        Some(match self {
            BinOp::Add => a.checked_add(b)?,
            BinOp::Sub => a.checked_sub(b)?,
            BinOp::Mul => a.checked_mul(b)?,
            BinOp::Div => {
                if b == -1 && a == i64::MIN {
                    return None;
                }
                hdiv(a, b)
            }
            BinOp::Mod => hmod(a, b),
            BinOp::TruncDiv => {
                if b == -1 && a == i64::MIN {
                    return None;
                }
                trunc_div(a, b)
            }
            BinOp::Lt => (a < b) as i64,
            BinOp::Le => (a <= b) as i64,
            BinOp::Gt => (a > b) as i64,
            BinOp::Ge => (a >= b) as i64,
            BinOp::Eq => (a == b) as i64,
            BinOp::Ne => (a != b) as i64,
            BinOp::And => (a != 0 && b != 0) as i64,
            BinOp::Or => (a != 0 || b != 0) as i64,
            BinOp::Implies => (a == 0 || b != 0) as i64,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Bound {
    Min,
    Max,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::Min => "min",
            Bound::Max => "max",
        })
    }
}

/// A quantified variable ranging over the half-open interval `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QVar {
    pub name: String,
    pub lo: Expr,
    pub hi: Expr,
}

impl QVar {
    pub fn new(name: impl Into<String>, lo: Expr, hi: Expr) -> Self {
        QVar { name: name.into(), lo, hi }
    }
}

/// Integer expression tree shared by the algorithm IR, the verification
/// encoding, the lowered loop nest and every annotation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Const(i64),
    Var(String),
    /// `\result`: the value of the function being specified.
    Result,
    /// Access to a pipeline function at a point.
    Func { name: String, args: Vec<Expr> },
    /// Access to an input buffer at a point.
    Buffer { name: String, args: Vec<Expr> },
    /// Call of a pure function in the verification encoding.
    Call { name: String, args: Vec<Expr> },
    /// Read of a flattened array.
    Load { array: String, index: Box<Expr> },
    /// Abstract pure function standing in for an input buffer (`p_i(index)`).
    InputAbs { buffer: String, name: String, index: Box<Expr> },
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Un(UnOp, Box<Expr>),
    Select(Box<Expr>, Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    /// `entity.dim.min` / `entity.dim.max` of a buffer or function.
    BoundRef { entity: String, dim: String, bound: Bound },
    /// Universal quantifier over half-open ranges. `separating` marks the
    /// permission form (`\forall*`).
    Forall { vars: Vec<QVar>, body: Box<Expr>, separating: bool },
    /// Fractional access permission on a location (always a [`Expr::Load`]).
    Perm { location: Box<Expr>, fraction: Fraction },
}

pub fn var(name: impl Into<String>) -> Expr {
    Expr::Var(name.into())
}

pub fn c(v: i64) -> Expr {
    Expr::Const(v)
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn not(e: Expr) -> Expr {
        Expr::Un(UnOp::Not, Box::new(e))
    }

    pub fn select(cond: Expr, then: Expr, otherwise: Expr) -> Expr {
        Expr::Select(Box::new(cond), Box::new(then), Box::new(otherwise))
    }

    pub fn load(array: impl Into<String>, index: Expr) -> Expr {
        Expr::Load { array: array.into(), index: Box::new(index) }
    }

    pub fn perm(location: Expr, fraction: Fraction) -> Expr {
        Expr::Perm { location: Box::new(location), fraction }
    }

    pub fn as_const(&self) -> Option<i64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Expr::Const(1))
    }

    /// Folding constructor for `a + b`.
    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => return c(x + y),
            (_, Some(0)) => return a,
            (Some(0), _) => return b,
            _ => {}
        }
        // (e + c1) + c2 => e + (c1 + c2)
        if let (Expr::Bin(BinOp::Add, inner, k1), Some(k2)) = (&a, b.as_const()) {
            if let Some(k1) = k1.as_const() {
                return Expr::add((**inner).clone(), c(k1 + k2));
            }
        }
        if let (Expr::Bin(BinOp::Sub, inner, k1), Some(k2)) = (&a, b.as_const()) {
            if let Some(k1) = k1.as_const() {
                return Expr::add((**inner).clone(), c(k2 - k1));
            }
        }
        if let Some(k) = b.as_const() {
            if k < 0 {
                return Expr::bin(BinOp::Sub, a, c(-k));
            }
        }
        Expr::bin(BinOp::Add, a, b)
    }

    /// Folding constructor for `a - b`.
    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => return c(x - y),
            (_, Some(0)) => return a,
            _ => {}
        }
        if a == b {
            return c(0);
        }
        if let Some(k) = b.as_const() {
            return Expr::add(a, c(-k));
        }
        Expr::bin(BinOp::Sub, a, b)
    }

    /// Folding constructor for `a * b`.
    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => c(x * y),
            (_, Some(0)) | (Some(0), _) => c(0),
            (_, Some(1)) => a,
            (Some(1), _) => b,
            _ => Expr::bin(BinOp::Mul, a, b),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => c(hdiv(x, y)),
            (_, Some(1)) => a,
            _ => Expr::bin(BinOp::Div, a, b),
        }
    }

    pub fn rem(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => c(hmod(x, y)),
            (_, Some(1)) => c(0),
            _ => Expr::bin(BinOp::Mod, a, b),
        }
    }

    /// Folding conjunction; `true` operands vanish.
    pub fn and(a: Expr, b: Expr) -> Expr {
        if a.is_true() {
            return b;
        }
        if b.is_true() {
            return a;
        }
        Expr::bin(BinOp::And, a, b)
    }

    pub fn and_all(items: impl IntoIterator<Item = Expr>) -> Expr {
        items.into_iter().fold(c(1), Expr::and)
    }

    pub fn implies(a: Expr, b: Expr) -> Expr {
        if a.is_true() {
            return b;
        }
        Expr::bin(BinOp::Implies, a, b)
    }

    pub fn lt(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Lt, a, b)
    }

    pub fn le(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Le, a, b)
    }

    pub fn eq(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Eq, a, b)
    }

    pub fn min(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => c(x.min(y)),
            _ => Expr::Min(Box::new(a), Box::new(b)),
        }
    }

    pub fn max(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => c(x.max(y)),
            _ => Expr::Max(Box::new(a), Box::new(b)),
        }
    }

    /// Quantifier constructor that merges directly nested quantifiers of the
    /// same kind and skips variables that do not occur in the body.
    pub fn forall(vars: Vec<QVar>, body: Expr, separating: bool) -> Expr {
        let free = body.free_vars();
        let mut vars: Vec<QVar> = vars.into_iter().filter(|q| free.contains(&q.name)).collect();
        if vars.is_empty() {
            return body;
        }
        if let Expr::Forall { vars: inner, body: inner_body, separating: s } = &body {
            if *s == separating {
                let bound: BTreeSet<&str> = vars.iter().map(|q| q.name.as_str()).collect();
                let clash = inner.iter().any(|q| bound.contains(q.name.as_str()));
                if !clash {
                    vars.extend(inner.iter().cloned());
                    return Expr::Forall { vars, body: inner_body.clone(), separating };
                }
            }
        }
        Expr::Forall { vars, body: Box::new(body), separating }
    }

    /// Direct children, in evaluation order.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Result | Expr::BoundRef { .. } => vec![],
            Expr::Func { args, .. } | Expr::Buffer { args, .. } | Expr::Call { args, .. } => {
                args.iter().collect()
            }
            Expr::Load { index, .. } | Expr::InputAbs { index, .. } => vec![index],
            Expr::Bin(_, a, b) | Expr::Min(a, b) | Expr::Max(a, b) => vec![a, b],
            Expr::Un(_, a) => vec![a],
            Expr::Select(a, b, d) => vec![a, b, d],
            Expr::Forall { vars, body, .. } => {
                let mut out = Vec::new();
                for q in vars {
                    out.push(&q.lo);
                    out.push(&q.hi);
                }
                out.push(body);
                out
            }
            Expr::Perm { location, .. } => vec![location],
        }
    }

    /// Pre-order traversal over every node, ignoring binders.
    pub fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        for ch in self.children() {
            ch.walk(f);
        }
    }

    pub fn any(&self, pred: &mut impl FnMut(&Expr) -> bool) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if !found && pred(e) {
                found = true;
            }
        });
        found
    }

    pub fn contains_perm(&self) -> bool {
        self.any(&mut |e| matches!(e, Expr::Perm { .. }))
    }

    /// Names of every array read through [`Expr::Load`].
    pub fn loaded_arrays(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Load { array, .. } = e {
                out.insert(array.clone());
            }
        });
        out
    }

    /// Top-down rewrite. When `f` returns `Some`, the replacement is used
    /// as-is; otherwise the node's children are rewritten. Binders are not
    /// taken into account.
    pub fn rewrite(&self, f: &mut impl FnMut(&Expr) -> Option<Expr>) -> Expr {
        if let Some(r) = f(self) {
            return r;
        }
        self.map_children(|ch| ch.rewrite(f))
    }

    /// Rebuilds the node with `g` applied to every child.
    pub fn map_children(&self, mut g: impl FnMut(&Expr) -> Expr) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Result | Expr::BoundRef { .. } => self.clone(),
            Expr::Func { name, args } => {
                Expr::Func { name: name.clone(), args: args.iter().map(&mut g).collect() }
            }
            Expr::Buffer { name, args } => {
                Expr::Buffer { name: name.clone(), args: args.iter().map(&mut g).collect() }
            }
            Expr::Call { name, args } => {
                Expr::Call { name: name.clone(), args: args.iter().map(&mut g).collect() }
            }
            Expr::Load { array, index } => {
                Expr::Load { array: array.clone(), index: Box::new(g(index)) }
            }
            Expr::InputAbs { buffer, name, index } => Expr::InputAbs {
                buffer: buffer.clone(),
                name: name.clone(),
                index: Box::new(g(index)),
            },
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(g(a)), Box::new(g(b))),
            Expr::Un(op, a) => Expr::Un(*op, Box::new(g(a))),
            Expr::Select(a, b, d) => Expr::Select(Box::new(g(a)), Box::new(g(b)), Box::new(g(d))),
            Expr::Min(a, b) => Expr::Min(Box::new(g(a)), Box::new(g(b))),
            Expr::Max(a, b) => Expr::Max(Box::new(g(a)), Box::new(g(b))),
            Expr::Forall { vars, body, separating } => Expr::Forall {
                vars: vars
                    .iter()
                    .map(|q| QVar { name: q.name.clone(), lo: g(&q.lo), hi: g(&q.hi) })
                    .collect(),
                body: Box::new(g(body)),
                separating: *separating,
            },
            Expr::Perm { location, fraction } => {
                Expr::Perm { location: Box::new(g(location)), fraction: *fraction }
            }
        }
    }

    /// Free variables (quantifier-bound names excluded).
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match self {
            Expr::Var(v) => {
                if !bound.iter().any(|b| b == v) {
                    out.insert(v.clone());
                }
            }
            Expr::Forall { vars, body, .. } => {
                let depth = bound.len();
                for q in vars {
                    q.lo.collect_free(bound, out);
                    q.hi.collect_free(bound, out);
                    bound.push(q.name.clone());
                }
                body.collect_free(bound, out);
                bound.truncate(depth);
            }
            _ => {
                for ch in self.children() {
                    ch.collect_free(bound, out);
                }
            }
        }
    }

    pub fn mentions_var(&self, name: &str) -> bool {
        self.free_vars().contains(name)
    }

    /// Replaces every free occurrence of `name` with `replacement`.
    pub fn substitute(&self, name: &str, replacement: &Expr) -> Expr {
        let mut map = HashMap::new();
        map.insert(name.to_string(), replacement.clone());
        self.substitute_all(&map)
    }

    /// Simultaneous substitution. Quantifier binders shadow the map and are
    /// renamed when they would capture a free variable of a replacement.
    pub fn substitute_all(&self, map: &HashMap<String, Expr>) -> Expr {
        if map.is_empty() {
            return self.clone();
        }
        match self {
            Expr::Var(v) => map.get(v).cloned().unwrap_or_else(|| self.clone()),
            Expr::Forall { vars, body, separating } => {
                let mut map = map.clone();
                let mut new_vars = Vec::with_capacity(vars.len());
                let mut renames: HashMap<String, Expr> = HashMap::new();
                let mut avoid: BTreeSet<String> = BTreeSet::new();
                for r in map.values() {
                    avoid.extend(r.free_vars());
                }
                avoid.extend(body.free_vars());
                for q in vars {
                    let lo = q.lo.substitute_all(&renames).substitute_all(&map);
                    let hi = q.hi.substitute_all(&renames).substitute_all(&map);
                    map.remove(&q.name);
                    let captured = map.values().any(|r| r.mentions_var(&q.name));
                    let name = if captured {
                        let fresh = fresh_name(&q.name, &avoid);
                        avoid.insert(fresh.clone());
                        renames.insert(q.name.clone(), var(fresh.clone()));
                        fresh
                    } else {
                        renames.remove(&q.name);
                        q.name.clone()
                    };
                    new_vars.push(QVar { name, lo, hi });
                }
                let body = body.substitute_all(&renames).substitute_all(&map);
                Expr::Forall { vars: new_vars, body: Box::new(body), separating: *separating }
            }
            _ => self.map_children(|ch| ch.substitute_all(map)),
        }
    }

    /// Constant folding and algebraic identities, bottom-up.
    pub fn simplify(&self) -> Expr {
        let e = self.map_children(|ch| ch.simplify());
        match e {
            Expr::Bin(op, a, b) => match op {
                BinOp::Add => Expr::add(*a, *b),
                BinOp::Sub => Expr::sub(*a, *b),
                BinOp::Mul => Expr::mul(*a, *b),
                BinOp::Div => Expr::div(*a, *b),
                BinOp::Mod => Expr::rem(*a, *b),
                BinOp::And => Expr::and(*a, *b),
                BinOp::Implies => Expr::implies(*a, *b),
                _ => match (a.as_const(), b.as_const()) {
                    (Some(x), Some(y)) => match op.apply(x, y) {
                        Some(v) => c(v),
                        None => Expr::Bin(op, a, b),
                    },
                    _ => Expr::Bin(op, a, b),
                },
            },
            Expr::Min(a, b) => Expr::min(*a, *b),
            Expr::Max(a, b) => Expr::max(*a, *b),
            Expr::Select(cnd, t, f) => match cnd.as_const() {
                Some(0) => *f,
                Some(_) => *t,
                None => Expr::Select(cnd, t, f),
            },
            other => other,
        }
    }
}

/// A name derived from `base` that is not in `avoid`: `base`, then `base1`, ...
pub fn fresh_name(base: &str, avoid: &BTreeSet<String>) -> String {
    if !avoid.contains(base) {
        return base.to_string();
    }
    (1..)
        .map(|i| format!("{base}{i}"))
        .find(|n| !avoid.contains(n))
        .expect("unbounded")
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add(self, rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul(self, rhs)
    }
}
