use crate::ir::{BinOp, Expr, UnOp};

/// Affine form `k + sum(coef * atom)`. Atoms are variables or subterms the
/// form cannot see into (products of variables, divisions, ...).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lin {
    pub k: i64,
    pub terms: Vec<(Expr, i64)>,
}

impl Lin {
    pub fn constant(k: i64) -> Lin {
        Lin { k, terms: Vec::new() }
    }

    fn atom(e: &Expr) -> Lin {
        Lin { k: 0, terms: vec![(e.clone(), 1)] }
    }

    pub fn is_const(&self) -> bool {
        self.terms.is_empty()
    }

    fn plus(mut self, o: &Lin, sign: i64) -> Lin {
        self.k += sign * o.k;
        for (a, c) in &o.terms {
            match self.terms.iter_mut().find(|(b, _)| b == a) {
                Some((_, d)) => *d += sign * c,
                None => self.terms.push((a.clone(), sign * c)),
            }
        }
        self.terms.retain(|(_, c)| *c != 0);
        self
    }

    fn scale(mut self, s: i64) -> Lin {
        if s == 0 {
            return Lin::constant(0);
        }
        self.k *= s;
        for (_, c) in self.terms.iter_mut() {
            *c *= s;
        }
        self
    }

    pub fn add(self, o: &Lin) -> Lin {
        self.plus(o, 1)
    }

    pub fn sub(self, o: &Lin) -> Lin {
        self.plus(o, -1)
    }

    pub fn of(e: &Expr) -> Lin {
        match e {
            Expr::Const(v) => Lin::constant(*v),
            Expr::Bin(BinOp::Add, a, b) => Lin::of(a).add(&Lin::of(b)),
            Expr::Bin(BinOp::Sub, a, b) => Lin::of(a).sub(&Lin::of(b)),
            Expr::Un(UnOp::Neg, a) => Lin::of(a).scale(-1),
            Expr::Bin(BinOp::Mul, a, b) => {
                let (la, lb) = (Lin::of(a), Lin::of(b));
                if lb.is_const() {
                    la.scale(lb.k)
                } else if la.is_const() {
                    lb.scale(la.k)
                } else {
                    Lin::atom(e)
                }
            }
            _ => Lin::atom(e),
        }
    }

    /// Coefficient and position of a bare variable term.
    pub fn var_term(&self, name: &str) -> Option<(usize, i64)> {
        self.terms
            .iter()
            .position(|(a, _)| matches!(a, Expr::Var(v) if v == name))
            .map(|i| (i, self.terms[i].1))
    }

    /// Same non-constant part, ignoring term order.
    pub fn same_shape(&self, o: &Lin) -> bool {
        self.terms.len() == o.terms.len() && self.terms.iter().all(|t| o.terms.contains(t))
    }

    pub fn to_expr(&self) -> Expr {
        let mut e: Option<Expr> = None;
        for (a, c) in &self.terms {
            let (t, neg) = match *c {
                1 => (a.clone(), false),
                -1 => (a.clone(), true),
                c if c < 0 => (Expr::mul(a.clone(), Expr::Const(-c)), true),
                c => (Expr::mul(a.clone(), Expr::Const(c)), false),
            };
            e = Some(match (e, neg) {
                (None, false) => t,
                (None, true) => Expr::Un(UnOp::Neg, Box::new(t)),
                (Some(acc), false) => Expr::add(acc, t),
                (Some(acc), true) => Expr::sub(acc, t),
            });
        }
        match e {
            None => Expr::Const(self.k),
            Some(acc) if self.k < 0 => Expr::sub(acc, Expr::Const(-self.k)),
            Some(acc) => Expr::add(acc, Expr::Const(self.k)),
        }
    }
}

/// Canonical affine form of an index expression.
pub fn normalize(e: &Expr) -> Expr {
    Lin::of(e).to_expr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{c, var};

    #[test]
    fn cancels_and_orders() {
        // (yo*8 + yi + 1 - yo*8) * 1024 + xo*2 + xi
        let y = Expr::add(Expr::add(Expr::mul(var("yo"), c(8)), var("yi")), c(1));
        let e = Expr::add(
            Expr::mul(Expr::sub(y, Expr::mul(var("yo"), c(8))), c(1024)),
            Expr::add(Expr::mul(var("xo"), c(2)), var("xi")),
        );
        assert_eq!(normalize(&e).to_string(), "yi * 1024 + xo * 2 + xi + 1024");
    }

    #[test]
    fn opaque_atoms() {
        let e = Expr::add(Expr::rem(var("f"), c(4)), Expr::mul(c(3), var("a")));
        let l = Lin::of(&e);
        assert_eq!(l.terms.len(), 2);
        assert_eq!(l.var_term("a"), Some((1, 3)));
        assert!(l.same_shape(&Lin::of(&Expr::add(e.clone(), c(5)))));
    }
}
