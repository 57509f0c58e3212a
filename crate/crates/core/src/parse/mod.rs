//! Parsers for `.hal` algorithm files and `.sched` schedule files.

mod lexer;
mod print;
mod schedule;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::ir::range::eval_const;
use crate::ir::{
    resolve_domains, validate_pipeline, Annotation, AnnotationKind, BinOp, Buffer, Diagnostic,
    DiagnosticKind, Dim, Expr, Func, Interval, Pipeline, QVar, RDom, RVar, SourceSpan, Stage,
    StageKind, UnOp,
};

pub use lexer::{tokenize, Tok, Token};
pub use print::print_pipeline;
pub use schedule::{parse_schedule, parse_schedule_named, Directive, ScheduleError};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{}", syntax_message(span, expected, found))]
    Syntax { span: SourceSpan, expected: Vec<String>, found: String },
    #[error("{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Diagnostic>),
}

fn syntax_message(span: &SourceSpan, expected: &[String], found: &str) -> String {
    if expected.is_empty() {
        format!("{span}: {found}")
    } else {
        format!("{span}: expected {}, found {found}", expected.join(" or "))
    }
}

impl ParseError {
    pub fn span(&self) -> Option<&SourceSpan> {
        match self {
            ParseError::Syntax { span, .. } => Some(span),
            ParseError::Validation(ds) => ds.iter().find_map(|d| d.span.as_ref()),
        }
    }
}

const MAX_DEPTH: u32 = 200;

pub(crate) struct Parser<'a> {
    file: &'a str,
    toks: Vec<Token>,
    pos: usize,
    depth: u32,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    pub(crate) fn new(file: &'a str, src: &str) -> PResult<Self> {
        Ok(Parser { file, toks: tokenize(file, src)?, pos: 0, depth: 0 })
    }

    pub(crate) fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub(crate) fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    pub(crate) fn span(&self) -> SourceSpan {
        let t = &self.toks[self.pos];
        SourceSpan::new(self.file, t.line, t.column, t.length)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub(crate) fn error<T>(&self, expected: &[&str]) -> PResult<T> {
        Err(ParseError::Syntax {
            span: self.span(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        })
    }

    pub(crate) fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(t) if *t == s)
    }

    pub(crate) fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(t) if t == kw)
    }

    pub(crate) fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub(crate) fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.error(&[&format!("`{s}`")])
        }
    }

    pub(crate) fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.error(&[&format!("`{kw}`")])
        }
    }

    pub(crate) fn expect_ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.error(&["identifier"]),
        }
    }

    pub(crate) fn expect_int(&mut self) -> PResult<i64> {
        let neg = self.eat_sym("-");
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => self.error(&["integer"]),
        }
    }

    pub(crate) fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(ParseError::Syntax {
                span: self.span(),
                expected: vec![],
                found: "expression nested too deeply".into(),
            });
        }
        Ok(())
    }

    pub(crate) fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let r = self.implies();
        self.depth -= 1;
        r
    }

    fn implies(&mut self) -> PResult<Expr> {
        let lhs = self.or()?;
        if self.eat_sym("==>") {
            let rhs = self.expr()?;
            return Ok(Expr::bin(BinOp::Implies, lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> PResult<Expr> {
        let mut e = self.and()?;
        while self.eat_sym("||") {
            let rhs = self.and()?;
            e = Expr::bin(BinOp::Or, e, rhs);
        }
        Ok(e)
    }

    fn and(&mut self) -> PResult<Expr> {
        let mut e = self.cmp()?;
        while self.eat_sym("&&") {
            let rhs = self.cmp()?;
            e = Expr::bin(BinOp::And, e, rhs);
        }
        Ok(e)
    }

    fn cmp_op(&self) -> Option<BinOp> {
        match self.peek() {
            Tok::Sym("<") => Some(BinOp::Lt),
            Tok::Sym("<=") => Some(BinOp::Le),
            Tok::Sym(">") => Some(BinOp::Gt),
            Tok::Sym(">=") => Some(BinOp::Ge),
            Tok::Sym("==") => Some(BinOp::Eq),
            Tok::Sym("!=") => Some(BinOp::Ne),
            _ => None,
        }
    }

    /// Comparison chains such as `0 <= a < n` denote conjunctions.
    fn cmp(&mut self) -> PResult<Expr> {
        let first = self.add()?;
        let mut result: Option<Expr> = None;
        let mut prev = first.clone();
        while let Some(op) = self.cmp_op() {
            self.bump();
            let rhs = self.add()?;
            let c = Expr::bin(op, prev, rhs.clone());
            result = Some(match result {
                None => c,
                Some(acc) => Expr::bin(BinOp::And, acc, c),
            });
            prev = rhs;
        }
        Ok(result.unwrap_or(first))
    }

    pub(crate) fn add(&mut self) -> PResult<Expr> {
        let mut e = self.mul()?;
        loop {
            let op = if self.is_sym("+") {
                BinOp::Add
            } else if self.is_sym("-") {
                BinOp::Sub
            } else {
                break;
            };
            self.bump();
            let rhs = self.mul()?;
            e = Expr::bin(op, e, rhs);
        }
        Ok(e)
    }

    fn mul(&mut self) -> PResult<Expr> {
        let mut e = self.unary()?;
        loop {
            let op = if self.is_sym("*") {
                BinOp::Mul
            } else if self.is_sym("/") {
                BinOp::Div
            } else if self.is_sym("%") {
                BinOp::Mod
            } else {
                break;
            };
            self.bump();
            let rhs = self.unary()?;
            e = Expr::bin(op, e, rhs);
        }
        Ok(e)
    }

    fn unary(&mut self) -> PResult<Expr> {
        self.enter()?;
        let r = if self.eat_sym("-") {
            if let Tok::Int(v) = *self.peek() {
                self.bump();
                Ok(Expr::Const(-v))
            } else {
                self.unary().map(|e| Expr::Un(UnOp::Neg, Box::new(e)))
            }
        } else if self.eat_sym("!") {
            self.unary().map(|e| Expr::Un(UnOp::Not, Box::new(e)))
        } else {
            self.primary()
        };
        self.depth -= 1;
        r
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect_sym("(")?;
        let mut out = Vec::new();
        if !self.is_sym(")") {
            loop {
                out.push(self.expr()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        Ok(out)
    }

    /// `lo..hi` or `lo..=hi`, returned as a half-open pair.
    pub(crate) fn range(&mut self) -> PResult<(Expr, Expr)> {
        let lo = self.add()?;
        if self.eat_sym("..") {
            Ok((lo, self.add()?))
        } else if self.eat_sym("..=") {
            let hi = self.add()?;
            Ok((lo, Expr::add(hi, Expr::Const(1))))
        } else {
            self.error(&["`..`", "`..=`"])
        }
    }

    fn primary(&mut self) -> PResult<Expr> {
        let start = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                match name.as_str() {
                    "true" => return Ok(Expr::Const(1)),
                    "false" => return Ok(Expr::Const(0)),
                    "forall" => return self.forall(),
                    _ => {}
                }
                if self.is_sym("(") {
                    let args = self.args()?;
                    let arity = |n: usize| -> PResult<()> {
                        if args.len() == n {
                            Ok(())
                        } else {
                            Err(ParseError::Syntax {
                                span: start.clone(),
                                expected: vec![format!("{n} arguments to `{name}`")],
                                found: format!("{}", args.len()),
                            })
                        }
                    };
                    let mut it = args.iter().cloned();
                    let mut next = || it.next().unwrap();
                    return Ok(match name.as_str() {
                        "select" => {
                            arity(3)?;
                            Expr::select(next(), next(), next())
                        }
                        "min" => {
                            arity(2)?;
                            Expr::Min(Box::new(next()), Box::new(next()))
                        }
                        "max" => {
                            arity(2)?;
                            Expr::Max(Box::new(next()), Box::new(next()))
                        }
                        "tdiv" => {
                            arity(2)?;
                            Expr::bin(BinOp::TruncDiv, next(), next())
                        }
                        _ => Expr::Call { name, args },
                    });
                }
                if self.is_sym(".") {
                    self.bump();
                    let dim = self.expect_ident()?;
                    self.expect_sym(".")?;
                    let bound = match self.peek() {
                        Tok::Ident(b) if b == "min" => crate::ir::Bound::Min,
                        Tok::Ident(b) if b == "max" => crate::ir::Bound::Max,
                        _ => return self.error(&["`min`", "`max`"]),
                    };
                    self.bump();
                    return Ok(Expr::BoundRef { entity: name, dim, bound });
                }
                Ok(Expr::Var(name))
            }
            _ => self.error(&["expression"]),
        }
    }

    fn forall(&mut self) -> PResult<Expr> {
        let mut vars = Vec::new();
        loop {
            let name = self.expect_ident()?;
            self.expect_kw("in")?;
            let (lo, hi) = self.range()?;
            vars.push(QVar::new(name, lo, hi));
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym(":")?;
        let body = self.expr()?;
        Ok(Expr::Forall { vars, body: Box::new(body), separating: false })
    }
}

enum Stmt {
    Def { name: String, lhs: Vec<Expr>, rhs: Expr, guard: Option<Expr>, span: SourceSpan },
    Ann { target: String, kind: AnnotationKind, rvar: Option<String>, body: Expr, span: SourceSpan },
}

struct Raw {
    name: String,
    inputs: Vec<(String, Vec<(String, Expr, Expr)>)>,
    output: String,
    out_dims: Vec<(String, Expr, Expr)>,
    params: Vec<(String, Expr)>,
    rdoms: Vec<Vec<(String, Expr, Expr)>>,
    requires: Vec<Annotation>,
    ensures: Vec<Annotation>,
    stmts: Vec<Stmt>,
}

fn dim_list(ps: &mut Parser<'_>) -> PResult<Vec<(String, Expr, Expr)>> {
    ps.expect_sym("[")?;
    let mut dims = Vec::new();
    loop {
        let n = ps.expect_ident()?;
        ps.expect_kw("in")?;
        let (lo, hi) = ps.range()?;
        dims.push((n, lo, hi));
        if !ps.eat_sym(",") {
            break;
        }
    }
    ps.expect_sym("]")?;
    Ok(dims)
}

fn parse_raw(ps: &mut Parser<'_>) -> PResult<Raw> {
    ps.expect_kw("pipeline")?;
    let name = ps.expect_ident()?;
    ps.expect_sym("(")?;
    let mut inputs = Vec::new();
    if !ps.is_sym(")") {
        loop {
            let b = ps.expect_ident()?;
            inputs.push((b, dim_list(ps)?));
            if !ps.eat_sym(",") {
                break;
            }
        }
    }
    ps.expect_sym(")")?;
    ps.expect_sym("->")?;
    let output = ps.expect_ident()?;
    let out_dims = dim_list(ps)?;
    ps.expect_sym("{")?;
    let mut raw = Raw {
        name,
        inputs,
        output,
        out_dims,
        params: vec![],
        rdoms: vec![],
        requires: vec![],
        ensures: vec![],
        stmts: vec![],
    };
    while !ps.eat_sym("}") {
        let span = ps.span();
        if ps.is_kw("param") && matches!(ps.peek_at(1), Tok::Ident(_)) {
            ps.bump();
            let n = ps.expect_ident()?;
            ps.expect_sym("=")?;
            let v = ps.expr()?;
            raw.params.push((n, v));
        } else if ps.is_kw("rdom") && matches!(ps.peek_at(1), Tok::Ident(_)) {
            ps.bump();
            let mut vars = Vec::new();
            loop {
                let n = ps.expect_ident()?;
                ps.expect_kw("in")?;
                let (lo, hi) = ps.range()?;
                vars.push((n, lo, hi));
                if !ps.eat_sym(",") {
                    break;
                }
            }
            raw.rdoms.push(vars);
        } else if (ps.is_kw("requires") || ps.is_kw("ensures")) && !matches!(ps.peek_at(1), Tok::Sym(".")) {
            let req = ps.is_kw("requires");
            ps.bump();
            let body = ps.expr()?;
            let kind = if req { AnnotationKind::Requires } else { AnnotationKind::Ensures };
            let a = Annotation { kind, body, span };
            if req {
                raw.requires.push(a);
            } else {
                raw.ensures.push(a);
            }
        } else {
            let target = ps.expect_ident()?;
            if ps.is_sym("(") {
                let lhs = ps.args()?;
                ps.expect_sym("=")?;
                let rhs = ps.expr()?;
                let guard = if ps.is_kw("if") {
                    ps.bump();
                    Some(ps.expr()?)
                } else {
                    None
                };
                raw.stmts.push(Stmt::Def { name: target, lhs, rhs, guard, span });
            } else if ps.eat_sym(".") {
                let kind = match ps.peek() {
                    Tok::Ident(k) if k == "requires" => AnnotationKind::Requires,
                    Tok::Ident(k) if k == "ensures" => AnnotationKind::Ensures,
                    Tok::Ident(k) if k == "context" => AnnotationKind::Context,
                    Tok::Ident(k) if k == "invariant" => AnnotationKind::Invariant,
                    _ => return ps.error(&["`requires`", "`ensures`", "`context`", "`invariant`"]),
                };
                ps.bump();
                ps.expect_sym("(")?;
                let mut rvar = None;
                let mut body = ps.expr()?;
                if kind == AnnotationKind::Invariant && ps.eat_sym(",") {
                    match body {
                        Expr::Var(v) => rvar = Some(v),
                        _ => {
                            return Err(ParseError::Syntax {
                                span,
                                expected: vec!["reduction variable".into()],
                                found: body.to_string(),
                            })
                        }
                    }
                    body = ps.expr()?;
                }
                ps.expect_sym(")")?;
                raw.stmts.push(Stmt::Ann { target, kind, rvar, body, span });
            } else {
                return ps.error(&["`(`", "`.`"]);
            }
        }
        ps.expect_sym(";")?;
    }
    if !ps.at_eof() {
        return ps.error(&["end of input"]);
    }
    Ok(raw)
}

fn diag(kind: DiagnosticKind, message: String, span: &SourceSpan) -> Diagnostic {
    Diagnostic { kind, message, span: Some(span.clone()) }
}

/// Replaces placeholder calls with function or buffer accesses.
fn resolve_calls(
    e: &Expr,
    funcs: &BTreeSet<String>,
    buffers: &BTreeSet<String>,
    span: &SourceSpan,
    diags: &mut Vec<Diagnostic>,
) -> Expr {
    e.rewrite(&mut |n| match n {
        Expr::Call { name, args } => {
            let args = args.iter().map(|a| resolve_calls(a, funcs, buffers, span, diags)).collect();
            Some(if funcs.contains(name) {
                Expr::Func { name: name.clone(), args }
            } else if buffers.contains(name) {
                Expr::Buffer { name: name.clone(), args }
            } else {
                diags.push(diag(DiagnosticKind::UnknownName, format!("unknown function `{name}`"), span));
                Expr::Func { name: name.clone(), args }
            })
        }
        _ => None,
    })
}

fn build(raw: Raw) -> Result<Pipeline, ParseError> {
    let mut diags = Vec::new();
    let none = SourceSpan::default();
    let mut p = Pipeline {
        name: raw.name,
        inputs: vec![],
        params: vec![],
        rdoms: vec![],
        funcs: vec![],
        output: raw.output.clone(),
        requires: vec![],
        ensures: vec![],
    };
    for (n, e) in &raw.params {
        match eval_const(e, &p) {
            Some(v) => p.params.push((n.clone(), v)),
            None => diags.push(diag(DiagnosticKind::InvalidInterval, format!("parameter `{n}` is not constant"), &none)),
        }
    }
    let interval = |p: &Pipeline, lo: &Expr, hi: &Expr, what: &str, diags: &mut Vec<Diagnostic>| {
        match (eval_const(lo, p), eval_const(hi, p)) {
            (Some(a), Some(b)) => Interval::new(a, b - a),
            _ => {
                diags.push(diag(DiagnosticKind::InvalidInterval, format!("bounds of `{what}` are not constant"), &none));
                Interval::default()
            }
        }
    };
    for group in &raw.rdoms {
        let vars = group
            .iter()
            .map(|(n, lo, hi)| RVar { name: n.clone(), interval: interval(&p, lo, hi, n, &mut diags), invariants: vec![] })
            .collect();
        p.rdoms.push(RDom { vars });
    }
    let out_dims: Vec<Dim> = raw
        .out_dims
        .iter()
        .map(|(n, lo, hi)| Dim::new(n.clone(), interval(&p, lo, hi, n, &mut diags)))
        .collect();

    let mut func_names = BTreeSet::new();
    for s in &raw.stmts {
        if let Stmt::Def { name, .. } = s {
            func_names.insert(name.clone());
        }
    }
    let buf_names: BTreeSet<String> = raw.inputs.iter().map(|(n, _)| n.clone()).collect();
    for (n, dims) in &raw.inputs {
        p.inputs.push(Buffer {
            name: n.clone(),
            dims: dims.iter().map(|(d, _, _)| Dim::new(d.clone(), Interval::default())).collect(),
            bound_exprs: dims.iter().map(|(_, lo, hi)| (lo.clone(), hi.clone())).collect(),
            requires: vec![],
        });
    }
    let rvar_group: HashMap<String, usize> = p
        .rdoms
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.vars.iter().map(move |v| (v.name.clone(), i)))
        .collect();

    let resolve = |e: &Expr, span: &SourceSpan, diags: &mut Vec<Diagnostic>| {
        resolve_calls(e, &func_names, &buf_names, span, diags)
    };
    for a in raw.requires {
        let body = resolve(&a.body, &a.span, &mut diags);
        p.requires.push(Annotation { body, ..a });
    }
    for a in raw.ensures {
        let body = resolve(&a.body, &a.span, &mut diags);
        p.ensures.push(Annotation { body, ..a });
    }
    for s in raw.stmts {
        match s {
            Stmt::Def { name, lhs, rhs, guard, span } => {
                let lhs: Vec<Expr> = lhs.iter().map(|e| resolve(e, &span, &mut diags)).collect();
                let rhs = resolve(&rhs, &span, &mut diags);
                let guard = guard.map(|g| resolve(&g, &span, &mut diags));
                let idx = match p.func_index(&name) {
                    Some(i) => i,
                    None => {
                        let dims = if name == p.output {
                            out_dims.clone()
                        } else {
                            let mut seen = BTreeSet::new();
                            lhs.iter()
                                .enumerate()
                                .map(|(i, a)| match a {
                                    Expr::Var(v) if seen.insert(v.clone()) => Dim::new(v.clone(), Interval::default()),
                                    _ => Dim::new(format!("_{i}"), Interval::default()),
                                })
                                .collect()
                        };
                        p.funcs.push(Func { name: name.clone(), dims, stages: vec![] });
                        p.funcs.len() - 1
                    }
                };
                let first = p.funcs[idx].stages.is_empty();
                let mut used = BTreeSet::new();
                for e in lhs.iter().chain(std::iter::once(&rhs)).chain(guard.iter()) {
                    used.extend(e.free_vars());
                }
                let groups: BTreeSet<usize> = used.iter().filter_map(|v| rvar_group.get(v).copied()).collect();
                let (kind, rdom) = if first {
                    (StageKind::Pure, None)
                } else if groups.is_empty() {
                    (StageKind::Update, None)
                } else {
                    if groups.len() > 1 {
                        diags.push(diag(
                            DiagnosticKind::MixedReductionDomains,
                            format!("definition of `{name}` uses variables of several reduction domains"),
                            &span,
                        ));
                    }
                    let g = *groups.iter().next().unwrap();
                    (StageKind::Reduction, Some(p.rdoms[g].clone()))
                };
                p.funcs[idx].stages.push(Stage { kind, lhs, rhs, guard, rdom, annotations: vec![], span });
            }
            Stmt::Ann { target, kind, rvar, body, span } => {
                let body = resolve(&body, &span, &mut diags);
                let ann = Annotation { kind, body, span: span.clone() };
                if let Some(b) = p.inputs.iter_mut().find(|b| b.name == target) {
                    if kind == AnnotationKind::Requires {
                        b.requires.push(ann);
                    } else {
                        diags.push(diag(
                            DiagnosticKind::PipelineAnnotationScope,
                            format!("input `{target}` only accepts `requires` annotations"),
                            &span,
                        ));
                    }
                    continue;
                }
                let Some(stage) = p.funcs.iter_mut().find(|f| f.name == target).and_then(|f| f.stages.last_mut())
                else {
                    diags.push(diag(
                        DiagnosticKind::UnknownName,
                        format!("annotation on `{target}` precedes any definition of it"),
                        &span,
                    ));
                    continue;
                };
                if kind != AnnotationKind::Invariant {
                    stage.annotations.push(ann);
                    continue;
                }
                let Some(rd) = stage.rdom.as_mut() else {
                    diags.push(diag(
                        DiagnosticKind::UnboundVariable,
                        format!("invariant on `{target}` follows a definition without a reduction domain"),
                        &span,
                    ));
                    continue;
                };
                let slot = match &rvar {
                    Some(r) => rd.vars.iter_mut().find(|v| &v.name == r),
                    None if rd.vars.len() == 1 => rd.vars.first_mut(),
                    None => None,
                };
                match slot {
                    Some(v) => v.invariants.push(ann),
                    None => diags.push(diag(
                        DiagnosticKind::UnboundVariable,
                        match rvar {
                            Some(r) => format!("`{r}` is not a reduction variable of this definition"),
                            None => "invariant must name its reduction variable".to_string(),
                        },
                        &span,
                    )),
                }
            }
        }
    }
    if p.func(&p.output).is_none() {
        diags.push(diag(DiagnosticKind::UnknownName, format!("output `{}` is never defined", p.output), &none));
    }
    if !diags.is_empty() {
        return Err(ParseError::Validation(diags));
    }
    let diags = validate_pipeline(&p);
    if !diags.is_empty() {
        return Err(ParseError::Validation(diags));
    }
    resolve_domains(&mut p).map_err(|d| ParseError::Validation(vec![d]))?;
    Ok(p)
}

/// Parses and validates a `.hal` pipeline.
pub fn parse_pipeline(text: &str) -> Result<Pipeline, ParseError> {
    parse_pipeline_named("<input>", text)
}

/// Like [`parse_pipeline`] with `file` recorded in every span.
pub fn parse_pipeline_named(file: &str, text: &str) -> Result<Pipeline, ParseError> {
    let mut ps = Parser::new(file, text)?;
    let raw = parse_raw(&mut ps)?;
    build(raw)
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Split { func, old, outer, inner, factor } => {
                write!(f, "{func}.split({old}, {outer}, {inner}, {factor})")
            }
            Directive::Fuse { func, inner, outer, fused } => write!(f, "{func}.fuse({inner}, {outer}, {fused})"),
            Directive::Reorder { func, dims } => write!(f, "{func}.reorder({})", dims.join(", ")),
            Directive::Parallel { func, dim } => write!(f, "{func}.parallel({dim})"),
            Directive::Unroll { func, dim } => write!(f, "{func}.unroll({dim})"),
            Directive::ComputeAt { producer, consumer, dim } => write!(f, "{producer}.compute_at({consumer}, {dim})"),
            Directive::StoreAt { producer, consumer, dim } => write!(f, "{producer}.store_at({consumer}, {dim})"),
        }
    }
}
