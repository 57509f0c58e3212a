use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::ir::{Pipeline, SourceSpan};

use super::{ParseError, Parser, Tok};

/// One scheduling command. Dimension names refer to the function's loop
/// variables as they exist when the directive is applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Directive {
    Split { func: String, old: String, outer: String, inner: String, factor: i64 },
    /// Fuses `inner` and `outer` into one loop; `inner` varies fastest.
    Fuse { func: String, inner: String, outer: String, fused: String },
    /// New loop order, innermost first.
    Reorder { func: String, dims: Vec<String> },
    Parallel { func: String, dim: String },
    Unroll { func: String, dim: String },
    ComputeAt { producer: String, consumer: String, dim: String },
    StoreAt { producer: String, consumer: String, dim: String },
}

impl Directive {
    /// The function whose loops or placement the directive changes.
    pub fn func(&self) -> &str {
        match self {
            Directive::Split { func, .. }
            | Directive::Fuse { func, .. }
            | Directive::Reorder { func, .. }
            | Directive::Parallel { func, .. }
            | Directive::Unroll { func, .. } => func,
            Directive::ComputeAt { producer, .. } | Directive::StoreAt { producer, .. } => producer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("{span}: unknown function `{name}`")]
    UnknownFunc { name: String, span: SourceSpan },
    #[error("{span}: `{func}` has no dimension `{dim}`")]
    UnknownDim { func: String, dim: String, span: SourceSpan },
    #[error("{span}: `{func}` already has a dimension `{dim}`")]
    DuplicateDim { func: String, dim: String, span: SourceSpan },
    #[error(transparent)]
    Syntax(#[from] ParseError),
}

/// Loop variable names of each stage of each function, tracked while
/// directives are read.
struct DimTracker {
    stages: HashMap<String, Vec<BTreeSet<String>>>,
}

impl DimTracker {
    fn new(p: &Pipeline) -> Self {
        let mut stages = HashMap::new();
        for f in &p.funcs {
            let sets = f
                .stages
                .iter()
                .map(|s| {
                    let mut set: BTreeSet<String> = f.pure_vars().into_iter().collect();
                    if let Some(rd) = &s.rdom {
                        set.extend(rd.vars.iter().map(|v| v.name.clone()));
                    }
                    set
                })
                .collect();
            stages.insert(f.name.clone(), sets);
        }
        DimTracker { stages }
    }

    fn has(&self, func: &str, dim: &str) -> bool {
        self.stages[func].iter().any(|s| s.contains(dim))
    }
}

fn arg_name(ps: &mut Parser<'_>) -> Result<String, ParseError> {
    ps.expect_ident()
}

/// Parses a `.sched` file against a validated pipeline.
pub fn parse_schedule(text: &str, p: &Pipeline) -> Result<Vec<Directive>, ScheduleError> {
    parse_schedule_named("<schedule>", text, p)
}

pub fn parse_schedule_named(file: &str, text: &str, p: &Pipeline) -> Result<Vec<Directive>, ScheduleError> {
    let mut ps = Parser::new(file, text)?;
    let mut dims = DimTracker::new(p);
    let mut out = Vec::new();
    while !ps.at_eof() {
        if ps.eat_sym(";") {
            continue;
        }
        let span = ps.span();
        let func = ps.expect_ident()?;
        if p.func(&func).is_none() {
            return Err(ScheduleError::UnknownFunc { name: func, span });
        }
        if !ps.is_sym(".") {
            return Err(ps.error::<()>(&["`.`"]).unwrap_err().into());
        }
        while ps.eat_sym(".") {
            let span = ps.span();
            let name = ps.expect_ident()?;
            ps.expect_sym("(")?;
            let unknown = |dim: &str| ScheduleError::UnknownDim { func: func.clone(), dim: dim.to_string(), span: span.clone() };
            let dup = |dim: &str| ScheduleError::DuplicateDim { func: func.clone(), dim: dim.to_string(), span: span.clone() };
            let d = match name.as_str() {
                "split" => {
                    let old = arg_name(&mut ps)?;
                    ps.expect_sym(",")?;
                    let outer = arg_name(&mut ps)?;
                    ps.expect_sym(",")?;
                    let inner = arg_name(&mut ps)?;
                    ps.expect_sym(",")?;
                    let factor = ps.expect_int()?;
                    if !dims.has(&func, &old) {
                        return Err(unknown(&old));
                    }
                    if outer == inner {
                        return Err(dup(&inner));
                    }
                    for set in dims.stages.get_mut(&func).unwrap().iter_mut().filter(|s| s.contains(&old)) {
                        for n in [&outer, &inner] {
                            if *n != old && set.contains(n) {
                                return Err(dup(n));
                            }
                        }
                        set.remove(&old);
                        set.insert(outer.clone());
                        set.insert(inner.clone());
                    }
                    Directive::Split { func: func.clone(), old, outer, inner, factor }
                }
                "fuse" => {
                    let inner = arg_name(&mut ps)?;
                    ps.expect_sym(",")?;
                    let outer = arg_name(&mut ps)?;
                    ps.expect_sym(",")?;
                    let fused = arg_name(&mut ps)?;
                    if inner == outer {
                        return Err(dup(&outer));
                    }
                    let sets = dims.stages.get_mut(&func).unwrap();
                    let mut hit = false;
                    for set in sets.iter_mut().filter(|s| s.contains(&inner) && s.contains(&outer)) {
                        if fused != inner && fused != outer && set.contains(&fused) {
                            return Err(dup(&fused));
                        }
                        set.remove(&inner);
                        set.remove(&outer);
                        set.insert(fused.clone());
                        hit = true;
                    }
                    if !hit {
                        let missing = if dims.has(&func, &inner) { &outer } else { &inner };
                        return Err(unknown(missing));
                    }
                    Directive::Fuse { func: func.clone(), inner, outer, fused }
                }
                "reorder" => {
                    let mut list = vec![arg_name(&mut ps)?];
                    while ps.eat_sym(",") {
                        list.push(arg_name(&mut ps)?);
                    }
                    let mut seen = BTreeSet::new();
                    for d in &list {
                        if !dims.has(&func, d) {
                            return Err(unknown(d));
                        }
                        if !seen.insert(d) {
                            return Err(dup(d));
                        }
                    }
                    Directive::Reorder { func: func.clone(), dims: list }
                }
                "parallel" | "unroll" => {
                    let dim = arg_name(&mut ps)?;
                    if !dims.has(&func, &dim) {
                        return Err(unknown(&dim));
                    }
                    if name == "parallel" {
                        Directive::Parallel { func: func.clone(), dim }
                    } else {
                        Directive::Unroll { func: func.clone(), dim }
                    }
                }
                "compute_at" | "store_at" => {
                    let cspan = ps.span();
                    let consumer = arg_name(&mut ps)?;
                    ps.expect_sym(",")?;
                    let dim = arg_name(&mut ps)?;
                    if p.func(&consumer).is_none() || consumer == func {
                        return Err(ScheduleError::UnknownFunc { name: consumer, span: cspan });
                    }
                    if !dims.has(&consumer, &dim) {
                        return Err(ScheduleError::UnknownDim { func: consumer, dim, span });
                    }
                    if name == "compute_at" {
                        Directive::ComputeAt { producer: func.clone(), consumer, dim }
                    } else {
                        Directive::StoreAt { producer: func.clone(), consumer, dim }
                    }
                }
                _ => {
                    return Err(ParseError::Syntax {
                        span,
                        expected: vec!["scheduling directive".into()],
                        found: format!("`{name}`"),
                    }
                    .into())
                }
            };
            ps.expect_sym(")")?;
            out.push(d);
        }
        if !ps.at_eof() && !matches!(ps.peek(), Tok::Sym(";")) {
            return Err(ps.error::<()>(&["`;`", "`.`"]).unwrap_err().into());
        }
    }
    Ok(out)
}
