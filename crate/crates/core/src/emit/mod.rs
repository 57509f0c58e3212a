//! Annotated C output. The unit holds the division helpers, the buffer
//! structs, the pipeline function with its contract and the loop nest with
//! every generated annotation as a VerCors comment.

use std::collections::HashMap;
use std::fmt::Write;

use serde::Serialize;

use crate::annotate::AnnotationSet;
use crate::ir::{print_expr, AnnotationKind, Expr, Syntax};
use crate::lower::{Assign, FlatAlloc, Lin, Loop, LoopKind, LoopNest, Node};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EmittedUnit {
    pub source: String,
    /// Lines inside annotation comments.
    pub loa: usize,
    /// Non-blank lines outside comments.
    pub loc: usize,
    pub loops: usize,
    pub parallel_loops: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EmitOptions {
    /// Writes every `context P` as `requires P` followed by `ensures P`.
    pub expand_context: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub loc: usize,
    pub loa: usize,
    pub loops: usize,
    pub user_loa: usize,
    /// `loa / max(user_loa, 1)`.
    pub ann_incr: f64,
}

pub fn annotation_metrics(u: &EmittedUnit, user_loa: usize) -> MetricsRow {
    MetricsRow { loc: u.loc, loa: u.loa, loops: u.loops, user_loa, ann_incr: u.loa as f64 / user_loa.max(1) as f64 }
}

/// Counts `(code, annotation)` lines. Annotation lines are `//@` lines and
/// the non-empty lines of `/*@ .. @*/` blocks; plain comments and the
/// delimiters themselves count as neither.
pub fn count_lines(src: &str) -> (usize, usize) {
    let (mut loc, mut loa) = (0, 0);
    let mut in_ann = false;
    let counts = |s: &str| {
        let s = s.trim();
        !s.is_empty() && !s.starts_with("//")
    };
    for line in src.lines() {
        let t = line.trim();
        if in_ann {
            if let Some(body) = t.strip_suffix("@*/") {
                in_ann = false;
                loa += counts(body) as usize;
            } else {
                loa += counts(t) as usize;
            }
        } else if let Some(rest) = t.strip_prefix("/*@") {
            match rest.strip_suffix("@*/") {
                Some(body) => loa += counts(body) as usize,
                None => {
                    in_ann = true;
                    loa += counts(rest) as usize;
                }
            }
        } else if t.starts_with("//@") {
            loa += 1;
        } else if counts(t) {
            loc += 1;
        }
    }
    (loc, loa)
}

pub fn emit(nest: &LoopNest) -> EmittedUnit {
    emit_with(nest, EmitOptions::default())
}

pub fn emit_with(nest: &LoopNest, opts: EmitOptions) -> EmittedUnit {
    let mut e = Emitter { nest, opts, out: String::new(), depth: 1, temps: 0, loops: 0, parallel: 0 };
    let body = e.function();
    let mut source = header(&body);
    source.push_str(&body);
    let (loc, loa) = count_lines(&source);
    EmittedUnit { source, loa, loc, loops: e.loops, parallel_loops: e.parallel }
}

fn calls(src: &str, name: &str) -> bool {
    let pat = format!("{name}(");
    src.match_indices(&pat).any(|(i, _)| {
        src[..i].chars().next_back().map_or(true, |c| !(c.is_ascii_alphanumeric() || c == '_'))
    })
}

fn header(body: &str) -> String {
    let mut s = String::from("#include <stdint.h>\n#include <stdlib.h>\n\n");
    s.push_str(
        "//@ pure int hdiv(int x, int y) = y == 0 ? 0 : \\euclidean_div(x, y);\n\
         /*@\n  ensures \\result == hdiv(x, y);\n@*/\n\
         static inline int32_t div_eucl(int32_t x, int32_t y)\n{\n\
         \x20   if (y == 0) return 0;\n\
         \x20   int32_t q = x / y;\n\
         \x20   int32_t r = x % y;\n\
         \x20   return r < 0 ? q + (y > 0 ? -1 : 1) : q;\n}\n\n",
    );
    if calls(body, "mod_eucl") || calls(body, "hmod") {
        s.push_str(
            "//@ pure int hmod(int x, int y) = y == 0 ? 0 : x - y * hdiv(x, y);\n\
             /*@\n  ensures \\result == hmod(x, y);\n@*/\n\
             static inline int32_t mod_eucl(int32_t x, int32_t y)\n{\n\
             \x20   if (y == 0) return 0;\n\
             \x20   int32_t r = x % y;\n\
             \x20   return r < 0 ? r + (y > 0 ? y : -y) : r;\n}\n\n",
        );
    }
    for (name, op) in [("min", "<"), ("max", ">")] {
        if calls(body, name) {
            let _ = writeln!(
                s,
                "/*@ pure @*/ static inline int32_t {name}(int32_t a, int32_t b) {{ return a {op} b ? a : b; }}\n"
            );
        }
    }
    s.push_str("struct halide_dimension_t {int32_t min, max;};\n");
    s.push_str("struct buffer {int32_t dimensions;struct halide_dimension_t *dim;int32_t *host;};\n");
    s
}

/// Where an array reference is printed: the function contract talks about
/// the buffer parameters, the body about the local host pointers.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Scope {
    Contract,
    Body,
}

struct Emitter<'a> {
    nest: &'a LoopNest,
    opts: EmitOptions,
    out: String,
    depth: usize,
    temps: usize,
    loops: usize,
    parallel: usize,
}

impl Emitter<'_> {
    fn line(&mut self, s: &str) {
        for _ in 0..self.depth {
            self.out.push(' ');
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    /// Buffer parameters: inputs in declaration order, then the output.
    fn params(&self) -> Vec<String> {
        let p = &self.nest.pipeline;
        p.inputs.iter().map(|b| b.name.clone()).chain([p.output.clone()]).collect()
    }

    fn is_param(&self, name: &str) -> bool {
        let p = &self.nest.pipeline;
        name == p.output || p.buffer(name).is_some()
    }

    fn rename(&self, e: &Expr, scope: Scope) -> Expr {
        e.rewrite(&mut |x| match x {
            Expr::Load { array, index } => {
                let array = if scope == Scope::Contract && self.is_param(array) {
                    format!("{array}b->host")
                } else {
                    format!("_{array}")
                };
                Some(Expr::Load { array, index: Box::new(self.rename(index, scope)) })
            }
            Expr::BoundRef { entity, dim, bound } => {
                let p = &self.nest.pipeline;
                let k = p.entity_dims(entity).and_then(|ds| ds.iter().position(|d| &d.name == dim));
                match k {
                    Some(k) if self.is_param(entity) => Some(Expr::Var(format!("{entity}b->dim[{k}].{bound}"))),
                    _ => p.bound_value(entity, dim, *bound).map(Expr::Const),
                }
            }
            _ => None,
        })
    }

    fn annot(&self, e: &Expr, scope: Scope) -> String {
        print_expr(&self.rename(e, scope), Syntax::CAnnot)
    }

    fn code(&self, e: &Expr) -> String {
        print_expr(&self.rename(e, Scope::Body), Syntax::CCode)
    }

    /// Annotation lines for a set, with `context` optionally expanded.
    fn annotation_lines(&self, set: &AnnotationSet, serial: bool, scope: Scope) -> Vec<String> {
        let mut out = Vec::new();
        for (kind, e) in set.iter() {
            let text = self.annot(e, scope);
            self.keyword_lines(kind, serial, &text, &mut out);
        }
        out
    }

    fn keyword_lines(&self, kind: AnnotationKind, serial: bool, text: &str, out: &mut Vec<String>) {
        let kw = match kind {
            _ if serial => "loop_invariant",
            AnnotationKind::Context if self.opts.expand_context => {
                out.push(format!("requires {text};"));
                out.push(format!("ensures {text};"));
                return;
            }
            AnnotationKind::Context => "context",
            AnnotationKind::Requires => "requires",
            AnnotationKind::Ensures => "ensures",
            AnnotationKind::Invariant => "loop_invariant",
        };
        out.push(format!("{kw} {text};"));
    }

    fn comment_block(&mut self, lines: &[String]) {
        if lines.is_empty() {
            return;
        }
        self.line("/*@");
        for l in lines {
            self.line(&format!(" {l}"));
        }
        self.line("@*/");
    }

    fn contract(&self) -> Vec<String> {
        let p = &self.nest.pipeline;
        let mut buf = Vec::new();
        let ctx = |text: String, out: &mut Vec<String>| self.keyword_lines(AnnotationKind::Context, false, &text, out);
        let params = self.params();
        for n in &params {
            let b = format!("{n}b");
            let dims = p.entity_dims(n).unwrap_or(&[]);
            ctx(format!("{b} != NULL ** Perm({b}, 1\\2)"), &mut buf);
            ctx(format!("Perm({b}->dim, 1\\2) ** {b}->dim != NULL"), &mut buf);
            ctx(format!("\\pointer_length({b}->dim) == {}", dims.len()), &mut buf);
            ctx(format!("Perm({b}->host, 1\\2) ** {b}->host != NULL"), &mut buf);
            for k in 0..dims.len() {
                ctx(format!("Perm(&{b}->dim[{k}], 1\\2)"), &mut buf);
                ctx(format!("Perm({b}->dim[{k}].min, 1\\2) ** Perm({b}->dim[{k}].max, 1\\2)"), &mut buf);
            }
            let size: Vec<String> = dims.iter().map(|d| d.interval.extent.to_string()).collect();
            ctx(format!("\\pointer_length({b}->host) == {}", size.join("*")), &mut buf);
        }
        let out = &p.output;
        for i in &p.inputs {
            ctx(format!("{out}b->host != {}b->host", i.name), &mut buf);
        }
        for n in &params {
            for (k, d) in p.entity_dims(n).unwrap_or(&[]).iter().enumerate() {
                ctx(format!("{n}b->dim[{k}].min == {} && {n}b->dim[{k}].max == {}", d.interval.min, d.interval.max()), &mut buf);
            }
        }
        let c = &self.nest.contract;
        let mut lines = vec!["// Buffer annotations".to_string()];
        lines.extend(buf);
        for e in &c.context {
            ctx(self.annot(e, Scope::Contract), &mut lines);
        }
        if !c.requires.is_empty() {
            lines.push("// Pipeline preconditions".into());
            lines.extend(c.requires.iter().map(|e| format!("requires {};", self.annot(e, Scope::Contract))));
        }
        if !c.ensures.is_empty() {
            lines.push("// Pipeline postconditions".into());
            lines.extend(c.ensures.iter().map(|e| format!("ensures {};", self.annot(e, Scope::Contract))));
        }
        lines
    }

    fn function(&mut self) -> String {
        let p = &self.nest.pipeline;
        let mut abs = String::new();
        for b in &p.inputs {
            let _ = writeln!(abs, "//@ pure int {}(int x);", p.input_abstraction_name(&b.name));
        }
        let params: Vec<String> = self.params().iter().map(|n| format!("struct buffer *{n}b")).collect();
        let contract = self.contract();
        let name = p.name.clone();
        self.depth = 0;
        self.comment_block(&contract);
        let contract_text = std::mem::take(&mut self.out);
        self.depth = 1;
        for n in self.params().iter().rev() {
            self.line(&format!("int32_t *_{n} = {n}b->host;"));
        }
        let body = self.nest.body.clone();
        self.block(&body);
        self.line("return 0;");
        let body_text = std::mem::take(&mut self.out);
        format!("{abs}{contract_text}int {name}({}) {{\n{body_text}}}\n", params.join(", "))
    }

    fn block(&mut self, nodes: &[Node]) {
        let nodes = expand_unrolled(nodes);
        let mut i = 0;
        while i < nodes.len() {
            if let Node::Assign(_) = nodes[i] {
                let run: Vec<&Assign> = nodes[i..]
                    .iter()
                    .map_while(|n| if let Node::Assign(a) = n { Some(a) } else { None })
                    .collect();
                i += run.len();
                self.assigns(&run);
                continue;
            }
            self.node(&nodes[i]);
            i += 1;
        }
    }

    fn node(&mut self, n: &Node) {
        match n {
            Node::Loop(l) => self.for_loop(l),
            Node::Produce { func, body } => {
                self.line(&format!("// produce {func}"));
                self.block(body);
            }
            Node::Consume { func, body } => {
                self.line(&format!("// consume {func}"));
                self.block(body);
            }
            Node::Store { alloc, body } => {
                let f = &alloc.func;
                self.line("{");
                self.depth += 1;
                self.line(&format!("int32_t *_{f} = (int32_t *)malloc(sizeof(int32_t) * {});", alloc.size));
                self.block(body);
                self.line(&format!("free(_{f});"));
                self.depth -= 1;
                self.line(&format!("}} // alloc _{f}"));
            }
            Node::If { cond, body } => {
                self.line(&format!("if ({}) {{", self.code(cond)));
                self.depth += 1;
                self.block(body);
                self.depth -= 1;
                self.line("}");
            }
            Node::Assign(a) => self.assigns(&[a]),
        }
    }

    fn for_loop(&mut self, l: &Loop) {
        let v = &l.dim.name;
        let min = self.code(&l.dim.min);
        let end = self.code(&Expr::add(l.dim.min.clone(), Expr::Const(l.dim.extent)));
        let head = format!("for (int {v} = {min}; {v} < {end}; {v}++)");
        self.loops += 1;
        if l.dim.kind == LoopKind::Parallel {
            self.parallel += 1;
            self.line("#pragma omp parallel for");
            self.line(&head);
            let lines = self.annotation_lines(&l.annotations, false, Scope::Body);
            self.comment_block(&lines);
            self.line("{");
        } else {
            let lines = self.annotation_lines(&l.annotations, true, Scope::Body);
            self.comment_block(&lines);
            self.line(&format!("{head} {{"));
        }
        self.depth += 1;
        self.block(&l.body);
        self.depth -= 1;
        self.line(&format!("}} // for {v}"));
    }

    /// A run of stores. Index expressions are split into a variable part,
    /// hoisted into a `_t` temporary shared by the run, and a constant
    /// offset.
    fn assigns(&mut self, run: &[&Assign]) {
        let mut temps: Vec<(Expr, String)> = Vec::new();
        let mut lets = Vec::new();
        let mut stmts = Vec::new();
        for a in run {
            let mut hoist = |index: &Expr, this: &mut Self| -> Expr {
                let lin = Lin::of(index);
                let var_part = Lin { k: 0, terms: lin.terms.clone() };
                let trivial = match var_part.terms.as_slice() {
                    [] => true,
                    [(Expr::Var(_), 1)] => true,
                    _ => false,
                };
                if trivial {
                    return lin.to_expr();
                }
                let e = var_part.to_expr();
                let name = match temps.iter().find(|(t, _)| *t == e) {
                    Some((_, n)) => n.clone(),
                    None => {
                        let n = format!("_t{}", this.temps);
                        this.temps += 1;
                        lets.push(format!("int32_t {n} = {};", this.code(&e)));
                        temps.push((e, n.clone()));
                        n
                    }
                };
                Expr::add(Expr::Var(name), Expr::Const(lin.k))
            };
            let index = hoist(&a.index, self);
            let value = a.value.rewrite(&mut |x| match x {
                Expr::Load { array, index } if !index.free_vars().is_empty() => {
                    Some(Expr::Load { array: array.clone(), index: Box::new(hoist(index, self)) })
                }
                _ => None,
            });
            stmts.push(format!("_{}[{}] = {};", a.array, print_expr(&index, Syntax::CCode), self.code(&value)));
        }
        for l in lets.into_iter().chain(stmts) {
            self.line(&l);
        }
    }
}

/// Replaces unrolled loops by one copy of their body per iteration.
fn expand_unrolled(nodes: &[Node]) -> Vec<Node> {
    let mut out = Vec::new();
    for n in nodes {
        match n {
            Node::Loop(l) if l.dim.kind == LoopKind::Unrolled => {
                for k in 0..l.dim.extent {
                    let at = Expr::add(l.dim.min.clone(), Expr::Const(k));
                    let mut sub = HashMap::new();
                    sub.insert(l.dim.name.clone(), at);
                    out.extend(expand_unrolled(&l.body.iter().map(|b| substitute(b, &sub)).collect::<Vec<_>>()));
                }
            }
            _ => out.push(n.clone()),
        }
    }
    out
}

fn substitute(n: &Node, sub: &HashMap<String, Expr>) -> Node {
    let s = |e: &Expr| Lin::of(&e.substitute_all(sub)).to_expr();
    let v = |e: &Expr| e.substitute_all(sub).simplify();
    let body = |b: &[Node]| b.iter().map(|c| substitute(c, sub)).collect::<Vec<_>>();
    match n {
        Node::Loop(l) => {
            let mut l = l.clone();
            l.dim.min = s(&l.dim.min);
            l.annotations = l.annotations.map(v);
            l.body = body(&l.body);
            Node::Loop(l)
        }
        Node::Produce { func, body: b } => Node::Produce { func: func.clone(), body: body(b) },
        Node::Consume { func, body: b } => Node::Consume { func: func.clone(), body: body(b) },
        Node::Store { alloc, body: b } => {
            let alloc = FlatAlloc { mins: alloc.mins.iter().map(s).collect(), ..alloc.clone() };
            Node::Store { alloc, body: body(b) }
        }
        Node::If { cond, body: b } => Node::If { cond: v(cond), body: body(b) },
        Node::Assign(a) => Node::Assign(Assign {
            stage: a.stage.clone(),
            array: a.array.clone(),
            args: a.args.iter().map(s).collect(),
            index: s(&a.index),
            value: a.value.rewrite(&mut |x| match x {
                Expr::Load { array, index } => Some(Expr::load(array.clone(), s(index))),
                Expr::Var(name) => sub.get(name).cloned(),
                _ => None,
            }),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_classes() {
        let src = "int x;\n//@ pure int f(int a);\n/*@\n // note\n requires a;\n ensures b;\n@*/\n// plain\n\n/*@ context c; @*/\n}\n";
        assert_eq!(count_lines(src), (2, 4));
    }

    #[test]
    fn increase_divides_by_user_lines() {
        let u = EmittedUnit { source: String::new(), loa: 30, loc: 10, loops: 2, parallel_loops: 0 };
        assert_eq!(annotation_metrics(&u, 2).ann_incr, 15.0);
        assert_eq!(annotation_metrics(&u, 0).ann_incr, 30.0);
    }

    #[test]
    fn helper_detection_respects_identifiers() {
        assert!(calls("a = min(b, c);", "min"));
        assert!(!calls("a = xmin(b, c);", "min"));
    }
}
