use std::fmt::Write;

use crate::ir::{AnnotationKind, Expr, Pipeline};

fn ann_name(k: AnnotationKind) -> &'static str {
    match k {
        AnnotationKind::Requires => "requires",
        AnnotationKind::Ensures => "ensures",
        AnnotationKind::Context => "context",
        AnnotationKind::Invariant => "invariant",
    }
}

fn args(es: &[Expr]) -> String {
    es.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", ")
}

/// Renders a pipeline in the `.hal` surface syntax; parsing the result
/// yields the same pipeline up to source spans.
pub fn print_pipeline(p: &Pipeline) -> String {
    let mut s = String::new();
    let inputs: Vec<String> = p
        .inputs
        .iter()
        .map(|b| {
            let dims: Vec<String> = b
                .dims
                .iter()
                .zip(&b.bound_exprs)
                .map(|(d, (lo, hi))| format!("{} in {}..{}", d.name, lo, hi))
                .collect();
            format!("{}[{}]", b.name, dims.join(", "))
        })
        .collect();
    let out_dims: Vec<String> = p
        .func(&p.output)
        .map(|f| {
            f.dims
                .iter()
                .map(|d| format!("{} in {}..{}", d.name, d.interval.min, d.interval.max()))
                .collect()
        })
        .unwrap_or_default();
    let _ = writeln!(s, "pipeline {}({}) -> {}[{}] {{", p.name, inputs.join(", "), p.output, out_dims.join(", "));
    for (n, v) in &p.params {
        let _ = writeln!(s, "  param {n} = {v};");
    }
    for rd in &p.rdoms {
        let vars: Vec<String> = rd
            .vars
            .iter()
            .map(|v| format!("{} in {}..{}", v.name, v.interval.min, v.interval.max()))
            .collect();
        let _ = writeln!(s, "  rdom {};", vars.join(", "));
    }
    for a in &p.requires {
        let _ = writeln!(s, "  requires {};", a.body);
    }
    for a in &p.ensures {
        let _ = writeln!(s, "  ensures {};", a.body);
    }
    for b in &p.inputs {
        for a in &b.requires {
            let _ = writeln!(s, "  {}.requires({});", b.name, a.body);
        }
    }
    for f in &p.funcs {
        for st in &f.stages {
            let guard = st.guard.as_ref().map(|g| format!(" if {g}")).unwrap_or_default();
            let _ = writeln!(s, "  {}({}) = {}{};", f.name, args(&st.lhs), st.rhs, guard);
            for a in &st.annotations {
                let _ = writeln!(s, "  {}.{}({});", f.name, ann_name(a.kind), a.body);
            }
            if let Some(rd) = &st.rdom {
                for v in &rd.vars {
                    for a in &v.invariants {
                        let _ = writeln!(s, "  {}.invariant({}, {});", f.name, v.name, a.body);
                    }
                }
            }
        }
    }
    s.push_str("}\n");
    s
}
