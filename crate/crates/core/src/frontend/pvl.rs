use std::fmt::Write;

use super::{EncodedProgram, PureFunctionDecl};
use crate::ir::{print_expr, BinOp, Expr, Syntax};

fn pvl(e: &Expr) -> String {
    print_expr(e, Syntax::Pvl)
}

fn ensures_text(e: &Expr) -> String {
    match e {
        Expr::Bin(BinOp::And | BinOp::Or, ..) => format!("({})", pvl(e)),
        _ => pvl(e),
    }
}

fn header(d: &PureFunctionDecl) -> String {
    let params: Vec<String> = d.params.iter().map(|p| format!("int {p}")).collect();
    match &d.body {
        Some(b) => format!("pure int {}({}) = {};", d.name, params.join(", "), pvl(b)),
        None => format!("pure int {}({});", d.name, params.join(", ")),
    }
}

fn is_bound_fn(d: &PureFunctionDecl) -> bool {
    d.params.is_empty() && d.requires.is_empty() && d.ensures.is_empty() && d.decreases.is_none()
}

/// Entity part of a bound function name `e_d_min`.
fn bound_entity(name: &str) -> &str {
    name.rsplitn(3, '_').nth(2).unwrap_or(name)
}

/// Renders the program in the PVL-like surface syntax.
pub fn print_program(prog: &EncodedProgram) -> String {
    let mut s = String::new();
    let decls = &prog.declarations;
    let mut i = 0;
    while i < decls.len() {
        let d = &decls[i];
        if is_bound_fn(d) {
            // Bound functions of one entity share a line.
            let entity = bound_entity(&d.name);
            let mut line = Vec::new();
            while i < decls.len() && is_bound_fn(&decls[i]) && bound_entity(&decls[i].name) == entity {
                line.push(header(&decls[i]));
                i += 1;
            }
            let _ = writeln!(s, "{}", line.join(" "));
            continue;
        }
        if i > 0 {
            s.push('\n');
        }
        for r in &d.requires {
            let _ = writeln!(s, "  requires {};", pvl(r));
        }
        for e in &d.ensures {
            let _ = writeln!(s, "  ensures {};", ensures_text(e));
        }
        if let Some(m) = &d.decreases {
            if m.is_empty() {
                s.push_str("  decreases;\n");
            } else {
                let _ = writeln!(s, "  decreases {};", m.join(", "));
            }
        }
        let _ = writeln!(s, "{}", header(d));
        i += 1;
    }
    s.push('\n');
    for r in &prog.lemma.requires {
        let _ = writeln!(s, "  requires {};", pvl(r));
    }
    for e in &prog.lemma.ensures {
        let _ = writeln!(s, "  ensures {};", ensures_text(e));
    }
    s.push_str("void pipeline() { }\n");
    s
}
