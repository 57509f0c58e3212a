//! Algorithm IR, annotation language and expression algebra.

pub mod arith;
pub mod expr;
pub mod infer;
pub mod pipeline;
pub mod print;
pub mod range;
pub mod validate;

pub use arith::{hdiv, hmod};
pub use expr::{c, fresh_name, var, BinOp, Bound, Expr, Fraction, QVar, UnOp};
pub use pipeline::{
    Annotation, AnnotationKind, Buffer, Dim, Func, Interval, Pipeline, RDom, RVar, SourceSpan,
    Stage, StageKind,
};
pub use print::{print_expr, Syntax};
pub use infer::{rescale, resolve_domains};
pub use validate::{validate_pipeline, Diagnostic, DiagnosticKind};
