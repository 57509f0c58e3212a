//! Concrete-execution oracle: random valuations, reference semantics,
//! interpretation of encoded and lowered programs, and annotation checks.

mod frontend;
mod lowered;
mod reference;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::eval::EvalError;
use crate::ir::{Interval, Pipeline, SourceSpan};

pub use frontend::check_frontend;
pub use lowered::{check_annotations, check_backend, run_lowered, LoweredProgram};
pub use reference::{eval_all, eval_reference};
pub(crate) use reference::stage_loops;

/// Values of all input buffers, each flattened with the first dimension
/// varying fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Valuation {
    pub buffers: BTreeMap<String, Table>,
    pub seed: Option<u64>,
}

/// Default range of random input values.
pub const INPUT_RANGE: (i64, i64) = (-100, 100);

impl Valuation {
    /// Uniform values in [`INPUT_RANGE`] for every input buffer.
    pub fn random(p: &Pipeline, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buffers = BTreeMap::new();
        for b in &p.inputs {
            let dims: Vec<Interval> = b.dims.iter().map(|d| d.interval).collect();
            let mut t = Table::new(dims);
            for v in t.data.iter_mut() {
                *v = Some(rng.gen_range(INPUT_RANGE.0..=INPUT_RANGE.1));
            }
            buffers.insert(b.name.clone(), t);
        }
        Valuation { buffers, seed: Some(seed) }
    }

    /// Every buffer filled by `f` applied to the point.
    pub fn from_fn(p: &Pipeline, f: impl Fn(&str, &[i64]) -> i64) -> Self {
        let mut buffers = BTreeMap::new();
        for b in &p.inputs {
            let dims: Vec<Interval> = b.dims.iter().map(|d| d.interval).collect();
            let data = points(&dims).map(|pt| Some(f(&b.name, &pt))).collect();
            let t = Table { dims, data };
            buffers.insert(b.name.clone(), t);
        }
        Valuation { buffers, seed: None }
    }
}

/// A dense multi-dimensional array; `None` marks unwritten cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub dims: Vec<Interval>,
    pub data: Vec<Option<i64>>,
}

impl Table {
    pub fn new(dims: Vec<Interval>) -> Self {
        let n = dims.iter().map(|d| d.extent.max(0) as usize).product();
        Table { dims, data: vec![None; n] }
    }

    pub fn index(&self, args: &[i64]) -> Option<usize> {
        if args.len() != self.dims.len() {
            return None;
        }
        let mut idx = 0usize;
        let mut stride = 1usize;
        for (a, d) in args.iter().zip(&self.dims) {
            if !d.contains(*a) {
                return None;
            }
            idx += (a - d.min) as usize * stride;
            stride *= d.extent as usize;
        }
        Some(idx)
    }

    pub fn get(&self, args: &[i64]) -> Option<Option<i64>> {
        self.index(args).map(|i| self.data[i])
    }

    /// All points in storage order.
    pub fn points(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        points(&self.dims)
    }
}

/// Points of a box, first dimension fastest.
pub fn points(dims: &[Interval]) -> impl Iterator<Item = Vec<i64>> + '_ {
    let total: i64 = dims.iter().map(|d| d.extent.max(0)).product();
    (0..total).map(move |mut n| {
        dims.iter()
            .map(|d| {
                let v = d.min + n % d.extent;
                n /= d.extent;
                v
            })
            .collect()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    InvariantViolation,
    Race,
    OutOfBounds,
    UninitializedRead,
    PermissionMissing,
    Overflow,
    Mismatch,
    PreconditionViolation,
    QuantifierLimit,
    Termination,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<String>,
}

impl Finding {
    pub fn new(kind: FindingKind, message: impl Into<String>) -> Self {
        Finding { kind, message: message.into(), span: None }
    }

    pub fn at(mut self, span: &SourceSpan) -> Self {
        if span.line > 0 && !span.file.is_empty() {
            self.span = Some(span.to_string());
        }
        self
    }
}

impl From<EvalError> for Finding {
    fn from(e: EvalError) -> Self {
        let kind = match &e {
            EvalError::Overflow(_) => FindingKind::Overflow,
            EvalError::OutOfBounds { .. } => FindingKind::OutOfBounds,
            EvalError::Uninitialized { .. } => FindingKind::UninitializedRead,
            EvalError::PermissionDenied { .. } => FindingKind::PermissionMissing,
            EvalError::QuantifierLimit => FindingKind::QuantifierLimit,
            EvalError::Termination(_) => FindingKind::Termination,
            EvalError::Precondition(_) => FindingKind::PreconditionViolation,
        };
        Finding::new(kind, e.to_string())
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.span {
            Some(s) => write!(f, "{}: {}: {}", s, self.kind, self.message),
            None => write!(f, "{}: {}", self.kind, self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    /// Points evaluated (function points or loop iterations).
    pub points: u64,
    pub instantiations: u64,
    pub millis: u64,
}

/// Findings beyond this many are counted but not stored.
pub const MAX_FINDINGS: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub pipeline: String,
    pub schedule: Option<String>,
    pub seed: Option<u64>,
    pub verdict: Verdict,
    pub findings: Vec<Finding>,
    pub stats: Stats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl CheckReport {
    pub fn new(pipeline: &str, schedule: Option<&str>, seed: Option<u64>) -> Self {
        CheckReport {
            pipeline: pipeline.to_string(),
            schedule: schedule.map(String::from),
            seed,
            verdict: Verdict::Pass,
            findings: Vec::new(),
            stats: Stats::default(),
        }
    }

    pub fn push(&mut self, f: Finding) {
        self.verdict = Verdict::Fail;
        if self.findings.len() < MAX_FINDINGS {
            self.findings.push(f);
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn has(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_index_is_first_dim_fastest() {
        let t = Table::new(vec![Interval::new(1, 3), Interval::new(-2, 2)]);
        assert_eq!(t.index(&[1, -2]), Some(0));
        assert_eq!(t.index(&[2, -2]), Some(1));
        assert_eq!(t.index(&[1, -1]), Some(3));
        assert_eq!(t.index(&[4, -1]), None);
        let pts: Vec<Vec<i64>> = t.points().collect();
        assert_eq!(pts.len(), 6);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(t.index(p), Some(i));
        }
    }

    #[test]
    fn finding_kinds_serialize_snake_case() {
        assert_eq!(FindingKind::InvariantViolation.to_string(), "invariant_violation");
    }
}
