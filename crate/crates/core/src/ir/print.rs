//! Precedence-aware expression printing for the DSL, the PVL encoding and
//! the emitted C (both annotation comments and executable code).

use std::fmt;

use super::expr::{BinOp, Expr, Fraction, UnOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Syntax {
    /// Surface syntax accepted by the `.hal` parser.
    Dsl,
    /// Pure-function verification language.
    Pvl,
    /// Specification expressions inside C comments.
    CAnnot,
    /// Executable C expressions.
    CCode,
}

const P_IMPLIES: u8 = 1;
const P_SELECT: u8 = 2;
const P_OR: u8 = 3;
const P_AND: u8 = 4;
const P_EQ: u8 = 5;
const P_REL: u8 = 6;
const P_ADD: u8 = 7;
const P_MUL: u8 = 8;
const P_UNARY: u8 = 9;
const P_ATOM: u8 = 10;

fn bin_prec(op: BinOp) -> u8 {
    match op {
        BinOp::Implies => P_IMPLIES,
        BinOp::Or => P_OR,
        BinOp::And => P_AND,
        BinOp::Eq | BinOp::Ne => P_EQ,
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => P_REL,
        BinOp::Add | BinOp::Sub => P_ADD,
        BinOp::Mul | BinOp::Div | BinOp::Mod | BinOp::TruncDiv => P_MUL,
    }
}

fn bin_symbol(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div | BinOp::TruncDiv => "/",
        BinOp::Mod => "%",
        BinOp::Lt => "<",
        BinOp::Le => "<=",
        BinOp::Gt => ">",
        BinOp::Ge => ">=",
        BinOp::Eq => "==",
        BinOp::Ne => "!=",
        BinOp::And => "&&",
        BinOp::Or => "||",
        BinOp::Implies => "==>",
    }
}

/// Renders a permission fraction as `n\d`.
pub fn fraction_text(f: &Fraction) -> String {
    format!("{}\\{}", f.numer(), f.denom())
}

pub fn print_expr(e: &Expr, syntax: Syntax) -> String {
    let mut out = String::new();
    Printer { syntax, out: &mut out }.expr(e, 0);
    out
}

struct Printer<'a> {
    syntax: Syntax,
    out: &'a mut String,
}

impl Printer<'_> {
    fn prec(&self, e: &Expr) -> u8 {
        match e {
            Expr::Const(v) if *v < 0 => P_UNARY,
            Expr::Bin(op, ..) => match (self.syntax, op) {
                (Syntax::Pvl | Syntax::CAnnot | Syntax::CCode, BinOp::Div | BinOp::Mod) => P_ATOM,
                (Syntax::Dsl, BinOp::TruncDiv) => P_ATOM,
                _ => bin_prec(*op),
            },
            Expr::Un(..) => P_UNARY,
            Expr::Select(..) if self.syntax != Syntax::Dsl => P_SELECT,
            _ => P_ATOM,
        }
    }

    fn push(&mut self, s: &str) {
        self.out.push_str(s);
    }

    fn expr(&mut self, e: &Expr, min_prec: u8) {
        let p = self.prec(e);
        if p < min_prec {
            self.push("(");
            self.node(e);
            self.push(")");
        } else {
            self.node(e);
        }
    }

    fn call(&mut self, name: &str, args: &[&Expr]) {
        self.push(name);
        self.push("(");
        for (i, a) in args.iter().enumerate() {
            if i > 0 {
                self.push(", ");
            }
            self.expr(a, 0);
        }
        self.push(")");
    }

    fn node(&mut self, e: &Expr) {
        match e {
            Expr::Const(v) => self.push(&v.to_string()),
            Expr::Var(v) => self.push(v),
            Expr::Result => self.push("\\result"),
            Expr::Func { name, args } | Expr::Buffer { name, args } | Expr::Call { name, args } => {
                let args: Vec<&Expr> = args.iter().collect();
                self.call(name, &args);
            }
            Expr::Load { array, index } => {
                self.push(array);
                self.push("[");
                self.expr(index, 0);
                self.push("]");
            }
            Expr::InputAbs { name, index, .. } => self.call(name, &[index]),
            Expr::Bin(op, a, b) => self.binary(*op, a, b),
            Expr::Un(op, a) => {
                self.push(match op {
                    UnOp::Neg => "-",
                    UnOp::Not => "!",
                });
                if matches!(**a, Expr::Const(_) | Expr::Un(..)) {
                    self.push("(");
                    self.expr(a, 0);
                    self.push(")");
                } else {
                    self.expr(a, P_UNARY);
                }
            }
            Expr::Select(cnd, t, f) => {
                if self.syntax == Syntax::Dsl {
                    self.call("select", &[cnd, t, f]);
                } else {
                    self.expr(cnd, P_SELECT + 1);
                    self.push(" ? ");
                    self.expr(t, P_SELECT);
                    self.push(" : ");
                    self.expr(f, P_SELECT);
                }
            }
            Expr::Min(a, b) => self.call("min", &[a, b]),
            Expr::Max(a, b) => self.call("max", &[a, b]),
            Expr::BoundRef { entity, dim, bound } => match self.syntax {
                Syntax::Dsl => self.push(&format!("{entity}.{dim}.{bound}")),
                Syntax::Pvl => self.push(&format!("{entity}_{dim}_{bound}()")),
                Syntax::CAnnot | Syntax::CCode => self.push(&format!("{entity}_{dim}_{bound}")),
            },
            Expr::Forall { vars, body, separating } => {
                if self.syntax == Syntax::Dsl {
                    self.push("(forall ");
                    for (i, q) in vars.iter().enumerate() {
                        if i > 0 {
                            self.push(", ");
                        }
                        self.push(&q.name);
                        self.push(" in ");
                        self.expr(&q.lo, P_ADD);
                        self.push("..");
                        self.expr(&q.hi, P_ADD);
                    }
                    self.push(" : ");
                    self.expr(body, 0);
                    self.push(")");
                } else {
                    self.push(if *separating { "(\\forall* " } else { "(\\forall " });
                    for (i, q) in vars.iter().enumerate() {
                        if i > 0 {
                            self.push(", ");
                        }
                        self.push("int ");
                        self.push(&q.name);
                    }
                    self.push("; ");
                    for (i, q) in vars.iter().enumerate() {
                        if i > 0 {
                            self.push(" && ");
                        }
                        self.expr(&q.lo, P_REL + 1);
                        self.push("<=");
                        self.push(&q.name);
                        self.push(" && ");
                        self.push(&q.name);
                        self.push("<");
                        self.expr(&q.hi, P_REL + 1);
                    }
                    self.push("; ");
                    self.expr(body, 0);
                    self.push(")");
                }
            }
            Expr::Perm { location, fraction } => {
                self.push("Perm(");
                if matches!(self.syntax, Syntax::CAnnot | Syntax::CCode) {
                    self.push("&");
                }
                self.expr(location, 0);
                self.push(", ");
                self.push(&fraction_text(fraction));
                self.push(")");
            }
        }
    }

    fn binary(&mut self, op: BinOp, a: &Expr, b: &Expr) {
        let func_name = match (self.syntax, op) {
            (Syntax::Pvl | Syntax::CAnnot, BinOp::Div) => Some("hdiv"),
            (Syntax::Pvl | Syntax::CAnnot, BinOp::Mod) => Some("hmod"),
            (Syntax::CCode, BinOp::Div) => Some("div_eucl"),
            (Syntax::CCode, BinOp::Mod) => Some("mod_eucl"),
            (Syntax::Dsl, BinOp::TruncDiv) => Some("tdiv"),
            _ => None,
        };
        if let Some(name) = func_name {
            self.call(name, &[a, b]);
            return;
        }
        let p = bin_prec(op);
        let (lp, rp) = match op {
            BinOp::Implies => (p + 1, p),
            // Comparison chains are conjunctions in the DSL, so nested
            // comparisons always get parentheses.
            o if o.is_comparison() => (P_REL + 1, P_REL + 1),
            _ => (p, p + 1),
        };
        self.expr(a, lp);
        self.push(" ");
        self.push(bin_symbol(op));
        self.push(" ");
        self.expr(b, rp);
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_expr(self, Syntax::Dsl))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::expr::{c, var, QVar};

    #[test]
    fn parenthesizes_by_precedence() {
        let e = Expr::bin(BinOp::Mul, Expr::bin(BinOp::Add, var("a"), var("b")), var("c"));
        assert_eq!(e.to_string(), "(a + b) * c");
        let e = Expr::bin(BinOp::Sub, var("a"), Expr::bin(BinOp::Sub, var("b"), var("c")));
        assert_eq!(e.to_string(), "a - (b - c)");
        let e = Expr::bin(BinOp::Sub, Expr::bin(BinOp::Sub, var("a"), var("b")), var("c"));
        assert_eq!(e.to_string(), "a - b - c");
    }

    #[test]
    fn division_per_syntax() {
        let e = Expr::bin(BinOp::Div, Expr::bin(BinOp::Add, var("a"), var("b")), c(3));
        assert_eq!(print_expr(&e, Syntax::Dsl), "(a + b) / 3");
        assert_eq!(print_expr(&e, Syntax::Pvl), "hdiv(a + b, 3)");
        assert_eq!(print_expr(&e, Syntax::CCode), "div_eucl(a + b, 3)");
    }

    #[test]
    fn quantifier_forms() {
        let body = Expr::perm(Expr::load("a", var("x")), Fraction::new(1, 2));
        let q = Expr::Forall {
            vars: vec![QVar::new("x", c(0), c(4))],
            body: Box::new(body),
            separating: true,
        };
        assert_eq!(print_expr(&q, Syntax::CAnnot), "(\\forall* int x; 0<=x && x<4; Perm(&a[x], 1\\2))");
    }

    #[test]
    fn select_and_implies() {
        let e = Expr::select(Expr::eq(var("r"), c(0)), var("a"), var("b"));
        assert_eq!(print_expr(&e, Syntax::Pvl), "r == 0 ? a : b");
        assert_eq!(e.to_string(), "select(r == 0, a, b)");
        let i = Expr::bin(BinOp::Implies, Expr::bin(BinOp::Implies, var("p"), var("q")), var("s"));
        assert_eq!(i.to_string(), "(p ==> q) ==> s");
    }
}
