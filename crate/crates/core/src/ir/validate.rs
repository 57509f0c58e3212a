//! Well-formedness rules for algorithm pipelines.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::Serialize;

use super::expr::{BinOp, Expr, UnOp};
use super::pipeline::{Annotation, Pipeline, SourceSpan, Stage, StageKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum DiagnosticKind {
    ArityMismatch,
    UnboundVariable,
    UnknownName,
    DuplicateName,
    ForwardReference,
    SelfReferenceNotCanonical,
    PipelineAnnotationScope,
    NonBooleanAnnotation,
    FirstStageNotPure,
    UpdatePureVarMisplaced,
    /// An update reads its own function somewhere other than the point it writes.
    UpdateReadsOtherPoint,
    NonAffineAccess,
    MixedReductionDomains,
    InvalidInterval,
    OutputNotLast,
    PermissionInUserAnnotation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
    pub span: Option<SourceSpan>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.span {
            Some(s) => write!(f, "{s}: {:?}: {}", self.kind, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

struct Checker<'a> {
    p: &'a Pipeline,
    out: Vec<Diagnostic>,
}

/// Where an expression occurs; determines which names it may use.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Scope<'a> {
    /// Stage definition of function `func` (index `idx` in definition order).
    Stage { func: &'a str, idx: usize },
    /// Annotation attached to function `func`.
    FuncAnnotation { func: &'a str, idx: usize },
    Pipeline,
    Buffer,
}

/// Checks every structural rule and returns one diagnostic per violation.
pub fn validate_pipeline(p: &Pipeline) -> Vec<Diagnostic> {
    let mut ck = Checker { p, out: Vec::new() };
    ck.run();
    ck.out
}

impl<'a> Checker<'a> {
    fn diag(&mut self, kind: DiagnosticKind, message: String, span: &SourceSpan) {
        let span = if span.line == 0 { None } else { Some(span.clone()) };
        self.out.push(Diagnostic { kind, message, span });
    }

    fn run(&mut self) {
        let p = self.p;
        let none = SourceSpan::default();
        let mut names = HashSet::new();
        for n in p
            .inputs
            .iter()
            .map(|b| &b.name)
            .chain(p.funcs.iter().map(|f| &f.name))
            .chain(p.params.iter().map(|(n, _)| n))
        {
            if !names.insert(n.as_str()) {
                self.diag(DiagnosticKind::DuplicateName, format!("`{n}` is declared twice"), &none);
            }
        }
        match p.funcs.last() {
            Some(f) if f.name == p.output => {}
            _ => self.diag(
                DiagnosticKind::OutputNotLast,
                format!("output `{}` must be the last defined function", p.output),
                &none,
            ),
        }
        for b in &p.inputs {
            for d in &b.dims {
                if d.interval.extent < 0 {
                    self.diag(
                        DiagnosticKind::InvalidInterval,
                        format!("dimension {}.{} has negative extent", b.name, d.name),
                        &none,
                    );
                }
            }
            let vars: BTreeSet<String> = b.dims.iter().map(|d| d.name.clone()).collect();
            for a in &b.requires {
                self.annotation(a, &vars, Scope::Buffer);
            }
        }
        for (idx, f) in p.funcs.iter().enumerate() {
            let mut seen = HashSet::new();
            for d in &f.dims {
                if !seen.insert(&d.name) {
                    self.diag(
                        DiagnosticKind::DuplicateName,
                        format!("`{}` has two dimensions named `{}`", f.name, d.name),
                        &none,
                    );
                }
                if d.interval.extent < 0 {
                    self.diag(
                        DiagnosticKind::InvalidInterval,
                        format!("dimension {}.{} has negative extent", f.name, d.name),
                        &none,
                    );
                }
            }
            for (si, s) in f.stages.iter().enumerate() {
                self.stage(idx, si, s);
            }
        }
        for a in p.requires.iter().chain(&p.ensures) {
            self.annotation(a, &BTreeSet::new(), Scope::Pipeline);
        }
    }

    fn stage(&mut self, idx: usize, si: usize, s: &Stage) {
        let f = &self.p.funcs[idx];
        let pure = f.pure_vars();
        if si == 0 {
            let bare = s.lhs.len() == pure.len()
                && s.lhs.iter().zip(&pure).all(|(a, v)| matches!(a, Expr::Var(n) if n == v));
            if s.kind != StageKind::Pure || !bare || s.guard.is_some() {
                self.diag(
                    DiagnosticKind::FirstStageNotPure,
                    format!("first definition of `{}` must be pure over distinct variables", f.name),
                    &s.span,
                );
            }
        } else if s.kind == StageKind::Pure {
            self.diag(
                DiagnosticKind::FirstStageNotPure,
                format!("`{}` is defined as pure twice", f.name),
                &s.span,
            );
        }
        if s.lhs.len() != pure.len() {
            self.diag(
                DiagnosticKind::ArityMismatch,
                format!("`{}` has {} dimensions but is defined with {}", f.name, pure.len(), s.lhs.len()),
                &s.span,
            );
        }
        let mut rvars = BTreeSet::new();
        if let Some(rd) = &s.rdom {
            let mut seen = HashSet::new();
            for v in &rd.vars {
                if !seen.insert(&v.name) || pure.contains(&v.name) {
                    self.diag(
                        DiagnosticKind::DuplicateName,
                        format!("reduction variable `{}` clashes with another variable", v.name),
                        &s.span,
                    );
                }
                if v.interval.extent < 0 {
                    self.diag(
                        DiagnosticKind::InvalidInterval,
                        format!("reduction variable `{}` has negative extent", v.name),
                        &s.span,
                    );
                }
                rvars.insert(v.name.clone());
            }
        }
        // Every reduction variable used by the stage must come from its own
        // domain, and reduction variables of other domains are not in scope.
        let all_rvars: BTreeSet<String> =
            self.p.rdoms.iter().flat_map(|r| r.vars.iter().map(|v| v.name.clone())).collect();
        let mut used = BTreeSet::new();
        for e in s.lhs.iter().chain(std::iter::once(&s.rhs)).chain(s.guard.iter()) {
            used.extend(e.free_vars());
        }
        for u in &used {
            if all_rvars.contains(u) && !rvars.contains(u) {
                self.diag(
                    DiagnosticKind::MixedReductionDomains,
                    format!("`{u}` belongs to a different reduction domain"),
                    &s.span,
                );
            }
        }
        if si > 0 {
            for (i, v) in pure.iter().enumerate() {
                let bare_here = matches!(s.lhs.get(i), Some(Expr::Var(n)) if n == v);
                let lhs_misuse = s
                    .lhs
                    .iter()
                    .enumerate()
                    .any(|(j, a)| a.mentions_var(v) && !(j == i && bare_here));
                if used.contains(v) && (!bare_here || lhs_misuse) {
                    self.diag(
                        DiagnosticKind::UpdatePureVarMisplaced,
                        format!("pure variable `{v}` of `{}` must appear unmodified at position {}", f.name, i + 1),
                        &s.span,
                    );
                }
            }
            let mut other = false;
            for e in std::iter::once(&s.rhs).chain(s.guard.iter()) {
                e.walk(&mut |n| {
                    if let Expr::Func { name, args } = n {
                        if *name == f.name && *args != s.lhs {
                            other = true;
                        }
                    }
                });
            }
            if other {
                self.diag(
                    DiagnosticKind::UpdateReadsOtherPoint,
                    format!("an update of `{}` may only read `{}` at the point it writes", f.name, f.name),
                    &s.span,
                );
            }
        }
        let mut vars: BTreeSet<String> = pure.iter().cloned().collect();
        vars.extend(rvars.iter().cloned());
        let scope = Scope::Stage { func: &f.name, idx };
        for e in s.lhs.iter().chain(std::iter::once(&s.rhs)).chain(s.guard.iter()) {
            self.expr(e, &vars, scope, &s.span);
            if e.contains_perm() || e.any(&mut |n| matches!(n, Expr::Forall { .. } | Expr::Result)) {
                self.diag(
                    DiagnosticKind::NonBooleanAnnotation,
                    "specification constructs are not allowed in definitions".into(),
                    &s.span,
                );
            }
        }
        for a in &s.lhs {
            if a.any(&mut |n| matches!(n, Expr::Func { .. } | Expr::Buffer { .. })) {
                self.diag(
                    DiagnosticKind::NonAffineAccess,
                    format!("definition of `{}` writes a data-dependent location", f.name),
                    &s.span,
                );
            }
        }
        self.affine_accesses(&s.rhs, &s.span);
        if let Some(g) = &s.guard {
            self.affine_accesses(g, &s.span);
        }
        let vars_ann: BTreeSet<String> = pure.iter().cloned().collect();
        let ascope = Scope::FuncAnnotation { func: &f.name, idx };
        for a in &s.annotations {
            self.annotation(a, &vars_ann, ascope);
        }
        if let Some(rd) = &s.rdom {
            let mut vars_inv = vars_ann.clone();
            vars_inv.extend(rvars.iter().cloned());
            for v in &rd.vars {
                for a in &v.invariants {
                    self.annotation(a, &vars_inv, ascope);
                }
            }
        }
    }

    fn affine_accesses(&mut self, e: &Expr, span: &SourceSpan) {
        let mut bad = Vec::new();
        e.walk(&mut |n| {
            if let Expr::Func { name, args } | Expr::Buffer { name, args } = n {
                if args.iter().any(|a| a.any(&mut |m| matches!(m, Expr::Func { .. } | Expr::Buffer { .. }))) {
                    bad.push(name.clone());
                }
            }
        });
        for name in bad {
            self.diag(
                DiagnosticKind::NonAffineAccess,
                format!("access to `{name}` uses a data-dependent index"),
                span,
            );
        }
    }

    fn annotation(&mut self, a: &Annotation, vars: &BTreeSet<String>, scope: Scope<'_>) {
        if !is_boolean(&a.body) {
            self.diag(
                DiagnosticKind::NonBooleanAnnotation,
                format!("annotation `{}` is not a predicate", a.body),
                &a.span,
            );
        }
        if a.body.contains_perm() {
            self.diag(
                DiagnosticKind::PermissionInUserAnnotation,
                "permissions are generated and cannot be written by hand".into(),
                &a.span,
            );
        }
        self.expr(&a.body, vars, scope, &a.span);
    }

    fn expr(&mut self, e: &Expr, vars: &BTreeSet<String>, scope: Scope<'_>, span: &SourceSpan) {
        let mut bound = Vec::new();
        self.expr_rec(e, vars, &mut bound, scope, span);
    }

    fn expr_rec(
        &mut self,
        e: &Expr,
        vars: &BTreeSet<String>,
        bound: &mut Vec<String>,
        scope: Scope<'_>,
        span: &SourceSpan,
    ) {
        let p = self.p;
        match e {
            Expr::Var(v) => {
                if !vars.contains(v) && !bound.contains(v) && p.param(v).is_none() {
                    self.diag(DiagnosticKind::UnboundVariable, format!("`{v}` is not bound"), span);
                }
            }
            Expr::Forall { vars: qs, body, .. } => {
                let depth = bound.len();
                for q in qs {
                    self.expr_rec(&q.lo, vars, bound, scope, span);
                    self.expr_rec(&q.hi, vars, bound, scope, span);
                    bound.push(q.name.clone());
                }
                self.expr_rec(body, vars, bound, scope, span);
                bound.truncate(depth);
                return;
            }
            Expr::Func { name, args } => match p.func_index(name) {
                None => {
                    let kind = DiagnosticKind::UnknownName;
                    self.diag(kind, format!("unknown function `{name}`"), span);
                }
                Some(fi) => {
                    let f = &p.funcs[fi];
                    if f.dims.len() != args.len() {
                        self.diag(
                            DiagnosticKind::ArityMismatch,
                            format!("`{name}` has {} dimensions but is accessed with {}", f.dims.len(), args.len()),
                            span,
                        );
                    }
                    match scope {
                        Scope::Stage { idx, .. } if fi > idx => self.diag(
                            DiagnosticKind::ForwardReference,
                            format!("`{name}` is used before it is defined"),
                            span,
                        ),
                        Scope::FuncAnnotation { func, idx } => {
                            if fi > idx {
                                self.diag(
                                    DiagnosticKind::ForwardReference,
                                    format!("`{name}` is used before it is defined"),
                                    span,
                                );
                            } else if func == name && *e != f.canonical_access() {
                                self.diag(
                                    DiagnosticKind::SelfReferenceNotCanonical,
                                    format!("annotation of `{name}` may only refer to {}", f.canonical_access()),
                                    span,
                                );
                            }
                        }
                        Scope::Pipeline if *name != p.output => self.diag(
                            DiagnosticKind::PipelineAnnotationScope,
                            format!("pipeline annotations may only mention inputs and `{}`", p.output),
                            span,
                        ),
                        Scope::Buffer => self.diag(
                            DiagnosticKind::PipelineAnnotationScope,
                            format!("buffer annotations cannot mention function `{name}`"),
                            span,
                        ),
                        _ => {}
                    }
                }
            },
            Expr::Buffer { name, args } => match p.buffer(name) {
                None => self.diag(DiagnosticKind::UnknownName, format!("unknown buffer `{name}`"), span),
                Some(b) => {
                    if b.dims.len() != args.len() {
                        self.diag(
                            DiagnosticKind::ArityMismatch,
                            format!("`{name}` has {} dimensions but is accessed with {}", b.dims.len(), args.len()),
                            span,
                        );
                    }
                }
            },
            Expr::BoundRef { entity, dim, .. } => match p.entity_dims(entity) {
                None => self.diag(DiagnosticKind::UnknownName, format!("unknown entity `{entity}`"), span),
                Some(ds) => {
                    if !ds.iter().any(|d| &d.name == dim) {
                        self.diag(DiagnosticKind::UnknownName, format!("`{entity}` has no dimension `{dim}`"), span);
                    }
                }
            },
            _ => {}
        }
        for ch in e.children() {
            self.expr_rec(ch, vars, bound, scope, span);
        }
    }
}

/// Shape-based boolean check: comparisons, connectives, quantifiers,
/// permissions, and literal truth values.
pub fn is_boolean(e: &Expr) -> bool {
    match e {
        Expr::Const(0) | Expr::Const(1) => true,
        Expr::Bin(op, a, b) => {
            if op.is_comparison() {
                true
            } else if matches!(op, BinOp::And | BinOp::Or | BinOp::Implies) {
                is_boolean(a) && is_boolean(b)
            } else {
                false
            }
        }
        Expr::Un(UnOp::Not, a) => is_boolean(a),
        Expr::Select(_, t, f) => is_boolean(t) && is_boolean(f),
        Expr::Forall { body, .. } => is_boolean(body),
        Expr::Perm { .. } => true,
        _ => false,
    }
}
