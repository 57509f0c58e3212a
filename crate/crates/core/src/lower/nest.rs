//! The imperative loop nest: store, produce and consume blocks around the
//! loops of every stage, with flattened array accesses.

use std::collections::BTreeMap;
use std::fmt::{self, Write};

use super::affine::normalize;
use super::bounds::{infer_bounds, Footprints};
use super::{apply_directives, LoopDim, LoopKind, LowerError, Placement, ScheduledPipeline};
use crate::annotate::AnnotationSet;
use crate::ir::{print_expr, Expr, Pipeline, Syntax};
use crate::parse::Directive;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StageRef {
    pub func: String,
    pub stage: usize,
}

/// A row-major (first dimension fastest) allocation covering a box.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatAlloc {
    pub func: String,
    pub mins: Vec<Expr>,
    pub extents: Vec<i64>,
    pub strides: Vec<i64>,
    pub size: i64,
}

impl FlatAlloc {
    pub fn new(func: impl Into<String>, mins: Vec<Expr>, extents: Vec<i64>) -> FlatAlloc {
        let mut strides = Vec::with_capacity(extents.len());
        let mut size = 1;
        for e in &extents {
            strides.push(size);
            size *= e;
        }
        FlatAlloc { func: func.into(), mins, extents, strides, size }
    }

    /// Flat offset of a point, in normalized affine form.
    pub fn offset(&self, args: &[Expr]) -> Expr {
        let mut e = Expr::Const(0);
        for ((a, m), s) in args.iter().zip(&self.mins).zip(&self.strides) {
            e = Expr::add(e, Expr::mul(Expr::sub(a.clone(), m.clone()), Expr::Const(*s)));
        }
        normalize(&e)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loop {
    pub dim: LoopDim,
    pub stage: StageRef,
    /// Invariants and block contract, filled in by the annotation pass.
    pub annotations: AnnotationSet,
    pub body: Vec<Node>,
}

/// One store statement. `args` is the written point in the algorithm's
/// coordinates, `value` the right-hand side with flattened loads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assign {
    pub stage: StageRef,
    pub array: String,
    pub args: Vec<Expr>,
    pub index: Expr,
    pub value: Expr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Loop(Loop),
    Produce { func: String, body: Vec<Node> },
    Consume { func: String, body: Vec<Node> },
    Store { alloc: FlatAlloc, body: Vec<Node> },
    If { cond: Expr, body: Vec<Node> },
    Assign(Assign),
}

impl Node {
    pub fn body(&self) -> &[Node] {
        match self {
            Node::Loop(l) => &l.body,
            Node::Produce { body, .. } | Node::Consume { body, .. } | Node::Store { body, .. } | Node::If { body, .. } => {
                body
            }
            Node::Assign(_) => &[],
        }
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        for n in self.body() {
            n.visit(f);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopNest {
    /// The pipeline after inlining.
    pub pipeline: Pipeline,
    pub body: Vec<Node>,
    /// Layout of every function and input buffer.
    pub allocs: BTreeMap<String, FlatAlloc>,
    /// Regions and loops every function was scheduled with.
    pub bounds: Footprints,
    /// Pipeline-level contract, filled in by the annotation pass.
    pub contract: AnnotationSet,
}

impl LoopNest {
    pub fn visit<'a>(&'a self, mut f: impl FnMut(&'a Node)) {
        for n in &self.body {
            n.visit(&mut f);
        }
    }

    pub fn loops(&self) -> Vec<&Loop> {
        let mut out = Vec::new();
        self.visit(|n| {
            if let Node::Loop(l) = n {
                out.push(l);
            }
        });
        out
    }

    pub fn assigns(&self) -> Vec<&Assign> {
        let mut out = Vec::new();
        self.visit(|n| {
            if let Node::Assign(a) = n {
                out.push(a);
            }
        });
        out
    }

    /// Rewrites function and buffer applications into loads from their
    /// flat arrays and folds bound references.
    pub fn flatten(&self, e: &Expr) -> Expr {
        flatten_with(&self.pipeline, &self.allocs, e)
    }

    /// Rendering with the statements abbreviated, which
    /// shows only the structure.
    pub fn outline(&self) -> String {
        let mut s = String::new();
        for n in &self.body {
            dump(n, 0, false, &mut s);
        }
        s
    }
}

impl fmt::Display for LoopNest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        for n in &self.body {
            dump(n, 0, true, &mut s);
        }
        f.write_str(&s)
    }
}

fn dump(n: &Node, depth: usize, full: bool, out: &mut String) {
    let pad = "  ".repeat(depth);
    let text = |e: &Expr| print_expr(e, Syntax::Dsl);
    let head = match n {
        Node::Loop(l) => {
            let d = &l.dim;
            let last = Expr::add(d.min.clone(), Expr::Const(d.extent - 1));
            format!("{} {} in [{}, {}]:", d.kind, d.path, text(&d.min), text(&last))
        }
        Node::Produce { func, .. } => format!("produce {func}:"),
        Node::Consume { func, .. } => format!("consume {func}:"),
        Node::Store { alloc, .. } => {
            if full {
                format!("store {}[{}]:", alloc.func, alloc.size)
            } else {
                format!("store {}:", alloc.func)
            }
        }
        Node::If { cond, .. } => format!("if {}:", text(cond)),
        Node::Assign(a) => {
            if full {
                format!("{}[{}] = {}", a.array, text(&a.index), text(&a.value))
            } else {
                format!("{}(...) = ...", a.stage.func)
            }
        }
    };
    let _ = writeln!(out, "{pad}{head}");
    for c in n.body() {
        dump(c, depth + 1, full, out);
    }
}

pub(crate) fn flatten_with(p: &Pipeline, allocs: &BTreeMap<String, FlatAlloc>, e: &Expr) -> Expr {
    e.rewrite(&mut |x| match x {
        Expr::Func { name, args } | Expr::Buffer { name, args } => {
            let a = allocs.get(name)?;
            let args: Vec<Expr> = args.iter().map(|a| flatten_with(p, allocs, a)).collect();
            Some(Expr::load(name.clone(), a.offset(&args)))
        }
        Expr::BoundRef { entity, dim, bound } => p.bound_value(entity, dim, *bound).map(Expr::Const),
        _ => None,
    })
}

struct Builder<'a> {
    sp: &'a ScheduledPipeline,
    fp: &'a Footprints,
    allocs: BTreeMap<String, FlatAlloc>,
}

impl Builder<'_> {
    fn stages(&self, f: &str) -> Vec<Node> {
        let fb = self.fp.get(f).expect("scheduled func");
        (0..fb.stages.len()).flat_map(|si| self.loops(f, si, 0)).collect()
    }

    fn loops(&self, f: &str, si: usize, k: usize) -> Vec<Node> {
        let fb = self.fp.get(f).unwrap();
        let st = &fb.stages[si];
        if k == st.dims.len() {
            return self.statement(f, si);
        }
        let mut body = self.loops(f, si, k + 1);
        let here = |p: &&super::FuncBounds| matches!(&p.site, Some((c, s, _)) if c == f && *s == si);
        for p in self.fp.funcs.iter().rev().filter(here) {
            if p.site.as_ref().unwrap().2 == k {
                body = vec![
                    Node::Produce { func: p.func.clone(), body: self.stages(&p.func) },
                    Node::Consume { func: p.func.clone(), body },
                ];
            }
        }
        for p in self.fp.funcs.iter().rev().filter(here) {
            if p.store_site == Some(k) {
                body = vec![Node::Store { alloc: self.allocs[&p.func].clone(), body }];
            }
        }
        vec![Node::Loop(Loop {
            dim: st.dims[k].clone(),
            stage: StageRef { func: f.to_string(), stage: si },
            annotations: AnnotationSet::default(),
            body,
        })]
    }

    fn statement(&self, f: &str, si: usize) -> Vec<Node> {
        let p = &self.sp.pipeline;
        let func = p.func(f).unwrap();
        let s = &func.stages[si];
        let fb = self.fp.get(f).unwrap();
        let st = &fb.stages[si];
        let origins = st.origin_map();
        let mut conds = st.guards.clone();
        for (d, span) in func.dims.iter().zip(&fb.compute) {
            if let (Some(iv), Some(o)) = (span.clamp, origins.get(&d.name)) {
                conds.push(Expr::le(Expr::Const(iv.min), o.clone()));
                conds.push(Expr::lt(o.clone(), Expr::Const(iv.max())));
            }
        }
        if let Some(g) = &s.guard {
            conds.push(flatten_with(p, &self.allocs, &g.substitute_all(&origins)));
        }
        let args: Vec<Expr> = s.lhs.iter().map(|a| a.substitute_all(&origins)).collect();
        let flat_args: Vec<Expr> = args.iter().map(|a| flatten_with(p, &self.allocs, a)).collect();
        let assign = Node::Assign(Assign {
            stage: StageRef { func: f.to_string(), stage: si },
            array: f.to_string(),
            index: self.allocs[f].offset(&flat_args),
            value: flatten_with(p, &self.allocs, &s.rhs.substitute_all(&origins)),
            args,
        });
        let cond = Expr::and_all(conds);
        if cond.is_true() {
            vec![assign]
        } else {
            vec![Node::If { cond, body: vec![assign] }]
        }
    }
}

/// Builds the loop nest of a scheduled pipeline.
pub fn build_loop_nest(sp: &ScheduledPipeline, fp: &Footprints) -> LoopNest {
    let p = &sp.pipeline;
    let mut allocs = BTreeMap::new();
    for b in &p.inputs {
        let mins = b.dims.iter().map(|d| Expr::Const(d.interval.min)).collect();
        let extents = b.dims.iter().map(|d| d.interval.extent).collect();
        allocs.insert(b.name.clone(), FlatAlloc::new(b.name.clone(), mins, extents));
    }
    for fb in &fp.funcs {
        let mins = fb.store.iter().map(|s| s.min.clone()).collect();
        let extents = fb.store.iter().map(|s| s.extent).collect();
        allocs.insert(fb.func.clone(), FlatAlloc::new(fb.func.clone(), mins, extents));
    }
    let b = Builder { sp, fp, allocs };
    let out = &p.output;
    let mut body = vec![Node::Produce { func: out.clone(), body: b.stages(out) }];
    for fs in sp.funcs.iter().rev().filter(|fs| fs.name != *out && fs.compute == Placement::Root) {
        body = vec![Node::Store {
            alloc: b.allocs[&fs.name].clone(),
            body: vec![
                Node::Produce { func: fs.name.clone(), body: b.stages(&fs.name) },
                Node::Consume { func: fs.name.clone(), body },
            ],
        }];
    }
    for fs in sp.funcs.iter().rev() {
        if fs.store == Placement::Root && fs.compute != Placement::Root {
            body = vec![Node::Store { alloc: b.allocs[&fs.name].clone(), body }];
        }
    }
    LoopNest { pipeline: p.clone(), body, allocs: b.allocs, bounds: fp.clone(), contract: AnnotationSet::default() }
}

/// Schedules, infers bounds and builds the nest in one go.
pub fn lower(p: &Pipeline, ds: &[Directive]) -> Result<LoopNest, LowerError> {
    let sp = apply_directives(p, ds)?;
    let fp = infer_bounds(&sp)?;
    Ok(build_loop_nest(&sp, &fp))
}

/// Loops of every stage of a function in the nest, by kind.
pub fn count_loops(nest: &LoopNest, kind: LoopKind) -> usize {
    nest.loops().iter().filter(|l| l.dim.kind == kind).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_pipeline, parse_schedule};

    const BLUR: &str = "pipeline blur(inp[x in 0..blur_y.x.max + 2, y in 0..blur_y.y.max + 2]) -> blur_y[x in 0..1024, y in 0..1024] {
        blur_x(x, y) = (inp(x, y) + inp(x + 1, y) + inp(x + 2, y)) / 3;
        blur_y(x, y) = (blur_x(x, y) + blur_x(x, y + 1) + blur_x(x, y + 2)) / 3;
    }";

    const LISTING5: &str = "blur_y.split(y, yo, yi, 8).parallel(yo).split(x, xo, xi, 2).unroll(xi);
        blur_x.store_at(blur_y, yo).compute_at(blur_y, yi).split(x, xo, xi, 2).unroll(xi);";

    fn nest(s: &str) -> LoopNest {
        let p = parse_pipeline(BLUR).unwrap();
        lower(&p, &parse_schedule(s, &p).unwrap()).unwrap()
    }

    #[test]
    fn listing5_structure() {
        let expected = "\
produce blur_y:
  parallel y.yo in [0, 127]:
    store blur_x:
      for y.yi in [0, 7]:
        produce blur_x:
          for y in [yo * 8 + yi, yo * 8 + yi + 2]:
            for x.xo in [0, 511]:
              unrolled x.xi in [0, 1]:
                blur_x(...) = ...
        consume blur_x:
          for x.xo in [0, 511]:
            unrolled x.xi in [0, 1]:
              blur_y(...) = ...
";
        assert_eq!(nest(LISTING5).outline(), expected);
    }

    #[test]
    fn listing5_flat_accesses() {
        let n = nest(LISTING5);
        assert_eq!(n.allocs["blur_x"].size, 10240);
        let a = n.assigns();
        assert_eq!(a[0].index.to_string(), "xo * 2 + xi + y * 1024 - yo * 8192");
        assert_eq!(a[1].index.to_string(), "xo * 2 + xi + yo * 8192 + yi * 1024");
        let v = a[1].value.to_string();
        assert!(v.contains("blur_x[xo * 2 + xi + yi * 1024 + 1024]"), "{v}");
    }

    #[test]
    fn empty_schedule_is_one_produce() {
        let n = nest("");
        assert_eq!(n.body.len(), 1);
        assert!(matches!(&n.body[0], Node::Produce { func, .. } if func == "blur_y"));
        assert_eq!(n.assigns().len(), 1);
        assert_eq!(n.assigns()[0].value.loaded_arrays().into_iter().collect::<Vec<_>>(), vec!["inp"]);
    }

    #[test]
    fn root_producer_is_stored_around_its_consumer() {
        let n = nest("blur_x.parallel(y);");
        let o = n.outline();
        assert!(o.starts_with("store blur_x:\n  produce blur_x:\n    parallel y in [0, 1025]:"), "{o}");
        assert!(o.contains("  consume blur_x:\n    produce blur_y:\n"), "{o}");
    }

    #[test]
    fn tail_guard_wraps_statement() {
        let n = nest("blur_y.split(x, xo, xi, 3);");
        assert!(n.outline().contains("if xo * 3 + xi < 1024:"), "{}", n.outline());
    }
}
