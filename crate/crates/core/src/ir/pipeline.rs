use std::fmt;

use serde::Serialize;

use super::expr::{Bound, Expr};

/// Location of a construct in a source file (1-based line and column).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct SourceSpan {
    pub file: String,
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

impl SourceSpan {
    pub fn new(file: impl Into<String>, line: u32, column: u32, length: u32) -> Self {
        SourceSpan { file: file.into(), line: line.max(1), column: column.max(1), length }
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

/// Half-open concrete interval `[min, min + extent)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize)]
pub struct Interval {
    pub min: i64,
    pub extent: i64,
}

impl Interval {
    pub fn new(min: i64, extent: i64) -> Self {
        Interval { min, extent }
    }

    pub fn from_bounds(min: i64, max: i64) -> Self {
        Interval { min, extent: (max - min).max(0) }
    }

    /// Exclusive upper bound.
    pub fn max(&self) -> i64 {
        self.min + self.extent
    }

    pub fn contains(&self, v: i64) -> bool {
        self.min <= v && v < self.max()
    }

    pub fn iter(&self) -> std::ops::Range<i64> {
        self.min..self.max()
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        if self.extent == 0 {
            return *other;
        }
        if other.extent == 0 {
            return *self;
        }
        Interval::from_bounds(self.min.min(other.min), self.max().max(other.max()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dim {
    pub name: String,
    pub interval: Interval,
}

impl Dim {
    pub fn new(name: impl Into<String>, interval: Interval) -> Self {
        Dim { name: name.into(), interval }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum AnnotationKind {
    Requires,
    Ensures,
    Context,
    Invariant,
}

impl fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotationKind::Requires => "requires",
            AnnotationKind::Ensures => "ensures",
            AnnotationKind::Context => "context",
            AnnotationKind::Invariant => "invariant",
        })
    }
}

/// A boolean predicate attached to a pipeline, stage, buffer or reduction
/// variable. Quantifier prefixes live inside `body` as [`Expr::Forall`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotation {
    pub kind: AnnotationKind,
    pub body: Expr,
    pub span: SourceSpan,
}

impl Annotation {
    pub fn new(kind: AnnotationKind, body: Expr) -> Self {
        Annotation { kind, body, span: SourceSpan::default() }
    }
}

/// One reduction variable with its range and reduction invariants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RVar {
    pub name: String,
    pub interval: Interval,
    pub invariants: Vec<Annotation>,
}

/// Reduction domain; `vars[0]` is the innermost (fastest varying) variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RDom {
    pub vars: Vec<RVar>,
}

impl RDom {
    pub fn get(&self, name: &str) -> Option<&RVar> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.iter().any(|v| v.interval.extent == 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StageKind {
    Pure,
    Update,
    Reduction,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stage {
    pub kind: StageKind,
    pub lhs: Vec<Expr>,
    pub rhs: Expr,
    pub guard: Option<Expr>,
    pub rdom: Option<RDom>,
    /// Requires / ensures / context annotations at the function's canonical point.
    pub annotations: Vec<Annotation>,
    pub span: SourceSpan,
}

impl Stage {
    pub fn ensures(&self) -> impl Iterator<Item = &Expr> {
        self.annotations
            .iter()
            .filter(|a| matches!(a.kind, AnnotationKind::Ensures | AnnotationKind::Context))
            .map(|a| &a.body)
    }

    pub fn requires(&self) -> impl Iterator<Item = &Expr> {
        self.annotations
            .iter()
            .filter(|a| matches!(a.kind, AnnotationKind::Requires | AnnotationKind::Context))
            .map(|a| &a.body)
    }

    /// Index of each pure variable within `lhs` when it appears there bare.
    pub fn bare_pure_positions(&self, pure_vars: &[String]) -> Vec<Option<usize>> {
        pure_vars
            .iter()
            .enumerate()
            .map(|(i, v)| match self.lhs.get(i) {
                Some(Expr::Var(n)) if n == v => Some(i),
                _ => None,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Func {
    pub name: String,
    /// Pure variables and the concrete domain the function is realized over.
    pub dims: Vec<Dim>,
    pub stages: Vec<Stage>,
}

impl Func {
    pub fn pure_vars(&self) -> Vec<String> {
        self.dims.iter().map(|d| d.name.clone()).collect()
    }

    pub fn dim(&self, name: &str) -> Option<&Dim> {
        self.dims.iter().find(|d| d.name == name)
    }

    pub fn is_pure(&self) -> bool {
        self.stages.len() == 1
    }

    /// The canonical point `f(x1, .., xn)`.
    pub fn canonical_access(&self) -> Expr {
        Expr::Func {
            name: self.name.clone(),
            args: self.dims.iter().map(|d| Expr::Var(d.name.clone())).collect(),
        }
    }

    pub fn domain_size(&self) -> i64 {
        self.dims.iter().map(|d| d.interval.extent).product()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Buffer {
    pub name: String,
    pub dims: Vec<Dim>,
    /// Source expressions for each dimension's `[min, max)`, kept so the
    /// pipeline can be re-resolved after output rescaling.
    pub bound_exprs: Vec<(Expr, Expr)>,
    /// Value constraints at the canonical point `b(x1, .., xn)`.
    pub requires: Vec<Annotation>,
}

impl Buffer {
    pub fn dim(&self, name: &str) -> Option<&Dim> {
        self.dims.iter().find(|d| d.name == name)
    }

    pub fn size(&self) -> i64 {
        self.dims.iter().map(|d| d.interval.extent).product()
    }

    pub fn canonical_access(&self) -> Expr {
        Expr::Buffer {
            name: self.name.clone(),
            args: self.dims.iter().map(|d| Expr::Var(d.name.clone())).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pipeline {
    pub name: String,
    pub inputs: Vec<Buffer>,
    pub params: Vec<(String, i64)>,
    /// Declared reduction domains, in declaration order.
    pub rdoms: Vec<RDom>,
    pub funcs: Vec<Func>,
    pub output: String,
    pub requires: Vec<Annotation>,
    pub ensures: Vec<Annotation>,
}

impl Pipeline {
    pub fn func(&self, name: &str) -> Option<&Func> {
        self.funcs.iter().find(|f| f.name == name)
    }

    pub fn func_index(&self, name: &str) -> Option<usize> {
        self.funcs.iter().position(|f| f.name == name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Buffer> {
        self.inputs.iter().find(|b| b.name == name)
    }

    pub fn output_func(&self) -> &Func {
        self.func(&self.output).expect("validated pipeline has its output func")
    }

    pub fn param(&self, name: &str) -> Option<i64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Dimensions of a buffer or function.
    pub fn entity_dims(&self, name: &str) -> Option<&[Dim]> {
        self.buffer(name)
            .map(|b| b.dims.as_slice())
            .or_else(|| self.func(name).map(|f| f.dims.as_slice()))
    }

    pub fn bound_value(&self, entity: &str, dim: &str, bound: Bound) -> Option<i64> {
        let d = self.entity_dims(entity)?.iter().find(|d| d.name == dim)?;
        Some(match bound {
            Bound::Min => d.interval.min,
            Bound::Max => d.interval.max(),
        })
    }

    /// Name of the abstract pure function standing in for an input buffer:
    /// `p_i` for a single input, `p_i0`, `p_i1`, ... otherwise.
    pub fn input_abstraction_name(&self, buffer: &str) -> String {
        if self.inputs.len() == 1 {
            "p_i".to_string()
        } else {
            let idx = self.inputs.iter().position(|b| b.name == buffer).unwrap_or(0);
            format!("p_i{idx}")
        }
    }

    /// Total number of user-written annotation statements.
    pub fn user_annotation_count(&self) -> usize {
        let stage_anns: usize = self
            .funcs
            .iter()
            .flat_map(|f| &f.stages)
            .map(|s| {
                s.annotations.len()
                    + s.rdom.as_ref().map_or(0, |r| r.vars.iter().map(|v| v.invariants.len()).sum())
            })
            .sum();
        let buf_anns: usize = self.inputs.iter().map(|b| b.requires.len()).sum();
        self.requires.len() + self.ensures.len() + stage_anns + buf_anns
    }

    /// Copy of the pipeline with every user annotation removed. Reduction
    /// invariants are replaced by `true` so the structure stays valid.
    pub fn without_user_annotations(&self) -> Pipeline {
        let mut p = self.clone();
        p.requires.clear();
        p.ensures.clear();
        for b in &mut p.inputs {
            b.requires.clear();
        }
        for f in &mut p.funcs {
            for s in &mut f.stages {
                s.annotations.clear();
                if let Some(rd) = &mut s.rdom {
                    for v in &mut rd.vars {
                        v.invariants = vec![Annotation::new(AnnotationKind::Invariant, Expr::Const(1))];
                    }
                }
            }
        }
        p
    }

    /// Copy with every source span reset, for structural comparison.
    pub fn strip_spans(&self) -> Pipeline {
        let mut p = self.clone();
        let clear = |a: &mut Annotation| a.span = SourceSpan::default();
        p.requires.iter_mut().for_each(clear);
        p.ensures.iter_mut().for_each(clear);
        for b in &mut p.inputs {
            b.requires.iter_mut().for_each(clear);
        }
        for rd in &mut p.rdoms {
            for v in &mut rd.vars {
                v.invariants.iter_mut().for_each(clear);
            }
        }
        for f in &mut p.funcs {
            for s in &mut f.stages {
                s.span = SourceSpan::default();
                s.annotations.iter_mut().for_each(clear);
                if let Some(rd) = &mut s.rdom {
                    for v in &mut rd.vars {
                        v.invariants.iter_mut().for_each(clear);
                    }
                }
            }
        }
        p
    }
}
