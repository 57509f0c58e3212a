//! Interpreter for annotated loop nests. Without checking it just runs the
//! nest; with checking it also tracks fractional permissions frame by frame
//! and evaluates every invariant and block contract at the points where a
//! verifier would have to prove them.

use std::collections::HashMap as StdMap;

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};
use std::rc::Rc;
use std::time::Instant;

use num_rational::Ratio;

use super::{Finding, FindingKind, Table, Valuation, CheckReport};
use crate::eval::{compile, Code, CompileError, EvalError, Host, Machine, Resolver, Scope};
use crate::ir::{Bound, Expr, Fraction};
use crate::lower::{LoopKind, LoopNest, Node};

/// Marks an access to an input through its abstraction: the value is read
/// without permission.
const ABS: u32 = 1 << 30;
const POISON: i64 = i64::MIN;

type Cells = HashMap<(u32, i64), Fraction>;

struct Ann {
    code: Code,
    /// Annotations with the same text and free variables grant the same
    /// permissions; they share this id.
    canon: usize,
    text: String,
    perm: bool,
    free: Vec<usize>,
    reads: Vec<u32>,
}

/// Permission annotations of one group plus the slots they depend on.
#[derive(Default)]
struct Group {
    perms: Vec<usize>,
    values: Vec<usize>,
    free: Vec<usize>,
}

enum Op {
    Loop {
        slot: usize,
        name: String,
        min: Code,
        extent: i64,
        kind: LoopKind,
        /// Invariants (serial) or context plus requires (parallel).
        pre: Group,
        /// Context plus ensures (parallel only).
        post: Group,
        body: Vec<Op>,
    },
    Store { array: u32, size: i64, body: Vec<Op> },
    If { cond: Code, body: Vec<Op> },
    Seq(Vec<Op>),
    /// `region` holds the written point and the storage box per dimension
    /// as (coordinate, min, extent).
    Assign { array: u32, index: Code, value: Code, region: Vec<(Code, Code, i64)>, func: String },
}

struct Names<'a> {
    nest: &'a LoopNest,
    ids: &'a StdMap<String, u32>,
}

impl Resolver for Names<'_> {
    fn leaf(&mut self, e: &Expr) -> Option<u32> {
        match e {
            Expr::Load { array, .. } => self.ids.get(array).copied(),
            Expr::InputAbs { buffer, .. } => self.ids.get(buffer).map(|i| i | ABS),
            _ => None,
        }
    }

    fn bound(&self, entity: &str, dim: &str, bound: Bound) -> Option<i64> {
        self.nest.pipeline.bound_value(entity, dim, bound)
    }
}

/// A loop nest compiled for repeated runs. Permission sets do not depend on
/// data, so they are cached across runs.
pub struct LoweredProgram {
    pipeline: String,
    names: Vec<String>,
    sizes: Vec<i64>,
    inputs: Vec<(u32, String)>,
    output: (u32, Table),
    anns: Vec<Ann>,
    contract_pre: Group,
    contract_post: Group,
    body: Vec<Op>,
    next_id: u64,
    perm_cache: HashMap<(usize, Vec<i64>), Rc<Part>>,
    set_ids: HashMap<Vec<u64>, u64>,
    subset_ok: HashSet<(u64, u64)>,
    sum_ok: HashSet<(Vec<u64>, u64)>,
}

/// Permissions granted by one annotation at one valuation of its free
/// variables.
struct Part {
    id: u64,
    cells: Cells,
}

/// Permissions of a group of annotations: the sum of its parts.
struct PermSet {
    id: u64,
    parts: Vec<Rc<Part>>,
}

fn sum_at(parts: &[Rc<Part>], cell: &(u32, i64)) -> Fraction {
    parts.iter().filter_map(|p| p.cells.get(cell)).sum()
}

/// Permissions held by the code currently running. Allocations made inside
/// the frame are held in full and listed separately.
#[derive(Clone)]
struct Frame {
    id: u64,
    parts: Vec<Rc<Part>>,
    stores: Vec<u32>,
}

impl Frame {
    fn get(&self, cell: &(u32, i64)) -> Fraction {
        let own = if self.stores.contains(&cell.0) { Ratio::from_integer(1) } else { Ratio::from_integer(0) };
        own + sum_at(&self.parts, cell)
    }

    fn readable(&self, cell: &(u32, i64)) -> bool {
        self.stores.contains(&cell.0) || self.parts.iter().any(|p| p.cells.get(cell).is_some_and(|q| *q > Ratio::from_integer(0)))
    }
}

fn fail(kind: FindingKind, msg: impl Into<String>) -> Finding {
    Finding::new(kind, msg)
}

struct Compiler<'a> {
    nest: &'a LoopNest,
    ids: StdMap<String, u32>,
    anns: Vec<Ann>,
    canon: StdMap<String, usize>,
}

impl Compiler<'_> {
    fn code(&self, e: &Expr, scope: &mut Scope) -> Result<Code, CompileError> {
        compile(e, scope, &mut Names { nest: self.nest, ids: &self.ids })
    }

    fn ann(&mut self, e: &Expr, scope: &mut Scope) -> Result<usize, CompileError> {
        let code = self.code(e, scope)?;
        let free = e.free_vars().iter().filter_map(|v| scope.slot(v)).collect();
        let reads = e.loaded_arrays().iter().filter_map(|a| self.ids.get(a).copied()).collect();
        let text = crate::ir::print_expr(e, crate::ir::Syntax::CAnnot);
        let n = self.canon.len();
        let canon = *self.canon.entry(text.clone()).or_insert(n);
        self.anns.push(Ann { code, canon, text, perm: e.contains_perm(), free, reads });
        Ok(self.anns.len() - 1)
    }

    fn group<'e>(&mut self, es: impl IntoIterator<Item = &'e Expr>, scope: &mut Scope) -> Result<Group, CompileError> {
        let mut g = Group::default();
        let mut free = std::collections::BTreeSet::new();
        for e in es {
            let i = self.ann(e, scope)?;
            if self.anns[i].perm {
                free.extend(self.anns[i].free.iter().copied());
                g.perms.push(i);
            } else {
                g.values.push(i);
            }
        }
        g.free = free.into_iter().collect();
        Ok(g)
    }

    fn nodes(&mut self, ns: &[Node], scope: &mut Scope) -> Result<Vec<Op>, CompileError> {
        ns.iter().map(|n| self.node(n, scope)).collect()
    }

    fn node(&mut self, n: &Node, scope: &mut Scope) -> Result<Op, CompileError> {
        Ok(match n {
            Node::Loop(l) => {
                let min = self.code(&l.dim.min, scope)?;
                let slot = scope.push(l.dim.name.clone());
                let a = &l.annotations;
                let (pre, post) = match l.dim.kind {
                    LoopKind::Parallel => (
                        self.group(a.context.iter().chain(&a.requires), scope)?,
                        self.group(a.context.iter().chain(&a.ensures), scope)?,
                    ),
                    _ => (self.group(&a.invariants, scope)?, Group::default()),
                };
                let body = self.nodes(&l.body, scope)?;
                scope.truncate(slot);
                Op::Loop { slot, name: l.dim.path.clone(), min, extent: l.dim.extent, kind: l.dim.kind, pre, post, body }
            }
            Node::Produce { body, .. } | Node::Consume { body, .. } => Op::Seq(self.nodes(body, scope)?),
            Node::Store { alloc, body } => {
                Op::Store { array: self.ids[&alloc.func], size: alloc.size, body: self.nodes(body, scope)? }
            }
            Node::If { cond, body } => Op::If { cond: self.code(cond, scope)?, body: self.nodes(body, scope)? },
            Node::Assign(a) => {
                let mut region = Vec::new();
                if let Some(al) = self.nest.allocs.get(&a.array) {
                    for ((x, m), e) in a.args.iter().zip(&al.mins).zip(&al.extents) {
                        region.push((self.code(x, scope)?, self.code(m, scope)?, *e));
                    }
                }
                Op::Assign {
                    array: self.ids[&a.array],
                    index: self.code(&a.index, scope)?,
                    value: self.code(&a.value, scope)?,
                    region,
                    func: a.stage.func.clone(),
                }
            }
        })
    }
}

impl LoweredProgram {
    pub fn new(nest: &LoopNest) -> Result<Self, Finding> {
        let names: Vec<String> = nest.allocs.keys().cloned().collect();
        let ids: StdMap<String, u32> = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        let sizes = nest.allocs.values().map(|a| a.size).collect();
        let p = &nest.pipeline;
        let inputs = p.inputs.iter().map(|b| (ids[&b.name], b.name.clone())).collect();
        let out = p.output_func();
        let table = Table::new(out.dims.iter().map(|d| d.interval).collect());
        let mut c = Compiler { nest, ids, anns: Vec::new(), canon: StdMap::new() };
        let cerr = |e: CompileError| fail(FindingKind::Mismatch, format!("cannot interpret the loop nest: {e}"));
        let mut scope = Scope::default();
        let k = &nest.contract;
        let contract_pre = c.group(k.context.iter().chain(&k.requires), &mut scope).map_err(cerr)?;
        let contract_post = c.group(k.context.iter().chain(&k.ensures), &mut scope).map_err(cerr)?;
        let body = c.nodes(&nest.body, &mut scope).map_err(cerr)?;
        let output = (c.ids[&out.name], table);
        Ok(LoweredProgram {
            pipeline: p.name.clone(),
            names,
            sizes,
            inputs,
            output,
            anns: c.anns,
            contract_pre,
            contract_post,
            body,
            next_id: 0,
            perm_cache: HashMap::default(),
            set_ids: HashMap::default(),
            subset_ok: HashSet::default(),
            sum_ok: HashSet::default(),
        })
    }

    fn memory(&self, v: &Valuation) -> Result<Vec<Vec<i64>>, Finding> {
        let mut arrays: Vec<Vec<i64>> = self.sizes.iter().map(|&n| vec![POISON; n.max(0) as usize]).collect();
        for (id, name) in &self.inputs {
            let t = v
                .buffers
                .get(name)
                .ok_or_else(|| fail(FindingKind::Mismatch, format!("no values for input `{name}`")))?;
            let a = &mut arrays[*id as usize];
            if a.len() != t.data.len() {
                return Err(fail(FindingKind::Mismatch, format!("layout of `{name}` differs from its domain")));
            }
            for (slot, x) in a.iter_mut().zip(&t.data) {
                *slot = x.unwrap_or(POISON);
            }
        }
        Ok(arrays)
    }

    fn run_inner(&mut self, v: &Valuation, check: bool) -> (Result<Table, Finding>, super::Stats) {
        let start = Instant::now();
        let arrays = match self.memory(v) {
            Ok(a) => a,
            Err(f) => return (Err(f), Default::default()),
        };
        let body = std::mem::take(&mut self.body);
        let mut run = Run {
            epochs: vec![0; arrays.len()],
            arrays,
            prog: self,
            frames: Vec::new(),
            m: Machine::default(),
            check,
            truth: HashMap::default(),
            points: 0,
            instantiations: 0,
        };
        let r = run.pipeline(&body);
        let Run { arrays, points, instantiations, .. } = run;
        self.body = body;
        let stats = super::Stats { points, instantiations, millis: start.elapsed().as_millis() as u64 };
        let out = r.map(|()| {
            let (id, t) = &self.output;
            let mut t = t.clone();
            for (cell, x) in t.data.iter_mut().zip(&arrays[*id as usize]) {
                *cell = (*x != POISON).then_some(*x);
            }
            t
        });
        (out, stats)
    }

    /// Runs the nest and returns the output function's values.
    pub fn run(&mut self, v: &Valuation) -> Result<Table, Finding> {
        self.run_inner(v, false).0
    }

    /// Runs the nest checking permissions and annotations.
    pub fn check(&mut self, v: &Valuation) -> CheckReport {
        let mut report = CheckReport::new(&self.pipeline.clone(), None, v.seed);
        let (r, stats) = self.run_inner(v, true);
        if let Err(f) = r {
            report.push(f);
        }
        report.stats = stats;
        report
    }

    /// [`check`](Self::check) plus a comparison of the output with `want`.
    pub fn check_output(&mut self, v: &Valuation, want: &Table) -> CheckReport {
        let mut report = CheckReport::new(&self.pipeline.clone(), None, v.seed);
        let (r, stats) = self.run_inner(v, true);
        match r {
            Err(f) => report.push(f),
            Ok(got) => {
                if let Some(i) = (0..got.data.len().max(want.data.len())).find(|&i| got.data.get(i) != want.data.get(i)) {
                    let show = |t: &Table| t.data.get(i).copied().flatten().map_or("nothing".into(), |x| x.to_string());
                    report.push(Finding::new(
                        FindingKind::Mismatch,
                        format!("output cell {i} is {} but the algorithm gives {}", show(&got), show(want)),
                    ));
                }
            }
        }
        report.stats = stats;
        report
    }
}

/// Output of the nest on one valuation.
pub fn run_lowered(nest: &LoopNest, v: &Valuation) -> Result<Table, Finding> {
    LoweredProgram::new(nest)?.run(v)
}

/// Checks annotations and compares the output with the reference
/// semantics of the algorithm.
pub fn check_backend(nest: &LoopNest, v: &Valuation) -> CheckReport {
    let want = match super::eval_reference(&nest.pipeline, v) {
        Ok(t) => t,
        Err(f) => {
            let mut r = CheckReport::new(&nest.pipeline.name, None, v.seed);
            r.push(f);
            return r;
        }
    };
    match LoweredProgram::new(nest) {
        Ok(mut prog) => prog.check_output(v, &want),
        Err(f) => {
            let mut r = CheckReport::new(&nest.pipeline.name, None, v.seed);
            r.push(f);
            r
        }
    }
}

/// Runs the nest on one valuation checking every permission and annotation.
pub fn check_annotations(nest: &LoopNest, v: &Valuation) -> CheckReport {
    match LoweredProgram::new(nest) {
        Ok(mut prog) => prog.check(v),
        Err(f) => {
            let mut r = CheckReport::new(&nest.pipeline.name, None, v.seed);
            r.push(f);
            r
        }
    }
}

struct Memory<'a> {
    names: &'a [String],
    arrays: &'a [Vec<i64>],
    /// Frame reads are checked against; `None` skips permission checks.
    frame: Option<&'a Frame>,
    record: Option<&'a mut Cells>,
}

impl Memory<'_> {
    fn cell(&self, id: u32, args: &[i64]) -> Result<i64, EvalError> {
        let off = args[0];
        let err = |e: fn(String, Vec<i64>) -> EvalError| e(self.names[id as usize].clone(), vec![off]);
        let a = &self.arrays[id as usize];
        if off < 0 || off as usize >= a.len() {
            return Err(err(|target, index| EvalError::OutOfBounds { target, index }));
        }
        match a[off as usize] {
            POISON => Err(err(|target, index| EvalError::Uninitialized { target, index })),
            x => Ok(x),
        }
    }
}

impl Host for Memory<'_> {
    fn access(&mut self, id: u32, args: &[i64]) -> Result<i64, EvalError> {
        if id & ABS != 0 {
            return self.cell(id & !ABS, args);
        }
        if let Some(f) = self.frame {
            if !f.readable(&(id, args[0])) {
                return Err(EvalError::PermissionDenied { target: self.names[id as usize].clone(), index: args.to_vec() });
            }
        }
        self.cell(id, args)
    }

    fn perm(&mut self, id: u32, args: &[i64], fraction: Fraction) -> Result<bool, EvalError> {
        if let Some(out) = self.record.as_deref_mut() {
            *out.entry((id, args[0])).or_insert(Ratio::from_integer(0)) += fraction;
        }
        Ok(true)
    }
}

struct Run<'a> {
    prog: &'a mut LoweredProgram,
    arrays: Vec<Vec<i64>>,
    epochs: Vec<u64>,
    frames: Vec<Frame>,
    m: Machine,
    check: bool,
    /// Annotation truth by free-variable values, valid while the arrays it
    /// reads are unchanged.
    truth: HashMap<(usize, Vec<i64>), (Vec<u64>, bool)>,
    points: u64,
    instantiations: u64,
}

#[derive(Clone, Copy)]
enum When {
    Entry,
    After(i64),
    Pre(i64),
    Post(i64),
}

impl Run<'_> {
    fn fresh(&mut self) -> u64 {
        self.prog.next_id += 1;
        self.prog.next_id
    }

    fn top(&self) -> Option<Frame> {
        if self.check {
            self.frames.last().cloned()
        } else {
            None
        }
    }

    fn eval(&mut self, c: &Code, frame: Option<&Frame>) -> Result<i64, EvalError> {
        let mut host = Memory { names: &self.prog.names, arrays: &self.arrays, frame, record: None };
        self.m.run(c, &mut host)
    }

    fn key(&self, free: &[usize]) -> Vec<i64> {
        free.iter().map(|&s| self.m.slots.get(s).copied().unwrap_or(0)).collect()
    }

    fn part(&mut self, i: usize) -> Result<Rc<Part>, Finding> {
        let key = (self.prog.anns[i].canon, self.key(&self.prog.anns[i].free));
        if let Some(p) = self.prog.perm_cache.get(&key) {
            return Ok(p.clone());
        }
        let mut cells = Cells::default();
        let ann = &self.prog.anns[i];
        self.m.instantiations = 0;
        let mut host = Memory { names: &self.prog.names, arrays: &self.arrays, frame: None, record: Some(&mut cells) };
        let ok = self.m.truth(&ann.code, &mut host).map_err(Finding::from)?;
        self.instantiations += self.m.instantiations;
        if !ok {
            return Err(fail(FindingKind::InvariantViolation, format!("does not hold: {}", ann.text)));
        }
        cells.retain(|_, q| *q != Ratio::from_integer(0));
        let part = Rc::new(Part { id: self.fresh(), cells });
        self.prog.perm_cache.insert(key, part.clone());
        Ok(part)
    }

    fn perms(&mut self, g: &Group) -> Result<PermSet, Finding> {
        let parts = g.perms.iter().map(|&i| self.part(i)).collect::<Result<Vec<_>, _>>()?;
        let ids: Vec<u64> = parts.iter().map(|p| p.id).collect();
        let id = match self.prog.set_ids.get(&ids) {
            Some(id) => *id,
            None => {
                let id = self.fresh();
                self.prog.set_ids.insert(ids, id);
                id
            }
        };
        Ok(PermSet { id, parts })
    }

    fn holds(&mut self, i: usize, frame: &Frame) -> Result<bool, Finding> {
        let ann = &self.prog.anns[i];
        let key = (i, self.key(&ann.free));
        let epochs: Vec<u64> = ann.reads.iter().map(|&a| self.epochs[a as usize]).collect();
        if let Some((e, r)) = self.truth.get(&key) {
            if *e == epochs {
                return Ok(*r);
            }
        }
        self.m.instantiations = 0;
        let mut host = Memory { names: &self.prog.names, arrays: &self.arrays, frame: Some(frame), record: None };
        let r = self.m.truth(&ann.code, &mut host).map_err(Finding::from)?;
        self.instantiations += self.m.instantiations;
        self.truth.insert(key, (epochs, r));
        Ok(r)
    }

    fn values(&mut self, g: &Group, frame: &Frame, kind: FindingKind, what: &str) -> Result<(), Finding> {
        for &i in &g.values {
            if !self.holds(i, frame)? {
                return Err(fail(kind, format!("{what}: {}", self.prog.anns[i].text)));
            }
        }
        Ok(())
    }

    fn subset(&mut self, s: &PermSet, what: &str) -> Result<(), Finding> {
        let outer = self.frames.last().expect("root frame");
        if self.prog.subset_ok.contains(&(s.id, outer.id)) {
            return Ok(());
        }
        // Parts held by both sides cancel; only the rest is compared cell
        // by cell.
        let mut rest_outer = outer.parts.clone();
        let mut rest = Vec::new();
        for p in &s.parts {
            match rest_outer.iter().position(|q| q.id == p.id) {
                Some(i) => {
                    rest_outer.swap_remove(i);
                }
                None => rest.push(p.clone()),
            }
        }
        let have_frame = Frame { id: 0, parts: rest_outer, stores: outer.stores.clone() };
        for part in &rest {
            for cell in part.cells.keys() {
                let (need, have) = (sum_at(&rest, cell), have_frame.get(cell));
                if need > have {
                    let (a, off) = *cell;
                    return Err(fail(
                        FindingKind::PermissionMissing,
                        format!("{what} needs {need} of `{}[{off}]` but only {have} is held", self.prog.names[a as usize]),
                    ));
                }
            }
        }
        self.prog.subset_ok.insert((s.id, outer.id));
        Ok(())
    }

    fn frame_of(s: &PermSet) -> Frame {
        Frame { id: s.id, parts: s.parts.clone(), stores: Vec::new() }
    }

    fn pipeline(&mut self, body: &[Op]) -> Result<(), Finding> {
        if !self.check {
            return self.exec(body);
        }
        let pre = std::mem::take(&mut self.prog.contract_pre);
        let post = std::mem::take(&mut self.prog.contract_post);
        let r = self.contract(&pre, &post, body);
        self.prog.contract_pre = pre;
        self.prog.contract_post = post;
        r
    }

    fn contract(&mut self, pre: &Group, post: &Group, body: &[Op]) -> Result<(), Finding> {
        let root = Self::frame_of(&self.perms(pre)?);
        self.frames.push(root.clone());
        self.values(pre, &root, FindingKind::PreconditionViolation, "pipeline precondition fails")?;
        self.exec(body)?;
        let end = self.frames.pop().expect("root frame");
        self.values(post, &end, FindingKind::InvariantViolation, "pipeline postcondition fails")
    }

    fn exec(&mut self, ops: &[Op]) -> Result<(), Finding> {
        for op in ops {
            self.op(op)?;
        }
        Ok(())
    }

    fn op(&mut self, op: &Op) -> Result<(), Finding> {
        match op {
            Op::Seq(body) => self.exec(body),
            Op::If { cond, body } => {
                let frame = self.top();
                if self.eval(cond, frame.as_ref()).map_err(Finding::from)? != 0 {
                    self.exec(body)?;
                }
                Ok(())
            }
            Op::Assign { array, index, value, region, func } => {
                self.points += 1;
                let frame = self.top();
                for (k, (x, m, e)) in region.iter().enumerate() {
                    let x = self.eval(x, frame.as_ref()).map_err(Finding::from)?;
                    let m = self.eval(m, frame.as_ref()).map_err(Finding::from)?;
                    if x < m || x >= m + e {
                        return Err(fail(
                            FindingKind::OutOfBounds,
                            format!(
                                "`{func}` writes coordinate {x} of dimension {k}, outside [{m}, {}) of `{}`",
                                m + e,
                                self.prog.names[*array as usize]
                            ),
                        ));
                    }
                }
                let x = self.eval(value, frame.as_ref()).map_err(Finding::from)?;
                let off = self.eval(index, frame.as_ref()).map_err(Finding::from)?;
                let a = *array as usize;
                if off < 0 || off as usize >= self.arrays[a].len() {
                    return Err(fail(
                        FindingKind::OutOfBounds,
                        format!("`{func}` stores to `{}[{off}]` outside its allocation", self.prog.names[a]),
                    ));
                }
                if let Some(f) = frame {
                    if f.get(&(*array, off)) != Ratio::from_integer(1) {
                        return Err(fail(
                            FindingKind::PermissionMissing,
                            format!("no write permission for `{}[{off}]`", self.prog.names[a]),
                        ));
                    }
                }
                self.arrays[a][off as usize] = x;
                self.epochs[a] += 1;
                Ok(())
            }
            Op::Store { array, size, body } => {
                let a = *array as usize;
                self.arrays[a].clear();
                self.arrays[a].resize((*size).max(0) as usize, POISON);
                self.epochs[a] += 1;
                if self.check {
                    let id = self.fresh();
                    let top = self.frames.last_mut().expect("root frame");
                    top.stores.push(*array);
                    top.id = id;
                }
                self.exec(body)?;
                if self.check {
                    let id = self.fresh();
                    let top = self.frames.last_mut().expect("root frame");
                    top.stores.retain(|s| s != array);
                    top.id = id;
                }
                Ok(())
            }
            Op::Loop { slot, name, min, extent, kind, pre, post, body } => {
                if self.m.slots.len() <= *slot {
                    self.m.slots.resize(slot + 1, 0);
                }
                let top = self.top();
                let lo = self.eval(min, top.as_ref()).map_err(Finding::from)?;
                match kind {
                    LoopKind::Serial if self.check => self.serial(*slot, name, lo, *extent, pre, body),
                    LoopKind::Parallel if self.check => self.parallel(*slot, name, lo, *extent, pre, post, body),
                    _ => {
                        for v in lo..lo + extent {
                            self.m.slots[*slot] = v;
                            self.exec(body)?;
                        }
                        Ok(())
                    }
                }
            }
        }
    }

    fn describe(name: &str, w: When) -> String {
        match w {
            When::Entry => format!("invariant of loop `{name}` fails on entry"),
            When::After(v) => format!("invariant of loop `{name}` fails after iteration {v}"),
            When::Pre(v) => format!("precondition of parallel `{name}` fails for iteration {v}"),
            When::Post(v) => format!("postcondition of parallel `{name}` fails for iteration {v}"),
        }
    }

    fn serial(&mut self, slot: usize, name: &str, lo: i64, extent: i64, inv: &Group, body: &[Op]) -> Result<(), Finding> {
        for v in lo..=lo + extent {
            self.m.slots[slot] = v;
            let when = if v == lo { When::Entry } else { When::After(v - 1) };
            let s = self.perms(inv).map_err(|f| retag(f, &Self::describe(name, when)))?;
            self.subset(&s, &format!("loop `{name}`"))?;
            let frame = Self::frame_of(&s);
            self.values(inv, &frame, FindingKind::InvariantViolation, &Self::describe(name, when))?;
            if v == lo + extent {
                break;
            }
            self.frames.push(frame);
            let r = self.exec(body);
            self.frames.pop();
            r?;
            // Inner code may have reused this slot for quantifiers.
            self.m.slots[slot] = v;
        }
        Ok(())
    }

    /// The iterations' permissions must fit in the enclosing frame.
    fn split_frame(&mut self, name: &str, sets: &[PermSet]) -> Result<(), Finding> {
        let outer = self.frames.last().expect("root frame").clone();
        let key = (sets.iter().map(|s| s.id).collect::<Vec<_>>(), outer.id);
        if self.prog.sum_ok.contains(&key) {
            return Ok(());
        }
        // Parts shared between iterations are summed once with their count.
        let mut parts: HashMap<u64, (Rc<Part>, i64)> = HashMap::default();
        for p in sets.iter().flat_map(|s| &s.parts) {
            parts.entry(p.id).or_insert_with(|| (p.clone(), 0)).1 += 1;
        }
        let mut sum: HashMap<(u32, i64), (Fraction, i64)> = HashMap::default();
        for (p, n) in parts.values() {
            for (cell, q) in &p.cells {
                let e = sum.entry(*cell).or_insert((Ratio::from_integer(0), 0));
                e.0 += q * n;
                e.1 += n;
            }
        }
        let mut bad: Vec<_> = sum.into_iter().filter(|(cell, (q, _))| *q > outer.get(cell)).collect();
        bad.sort_by(|a, b| (b.1 .0, a.0).cmp(&(a.1 .0, b.0)));
        if let Some(((a, off), (q, n))) = bad.into_iter().next() {
            let arr = &self.prog.names[a as usize];
            let have = outer.get(&(a, off));
            return Err(if n >= 2 && q > Ratio::from_integer(1) {
                fail(FindingKind::Race, format!("{n} iterations of parallel `{name}` claim `{arr}[{off}]` ({q} in total)"))
            } else {
                fail(FindingKind::PermissionMissing, format!("parallel `{name}` needs {q} of `{arr}[{off}]` but only {have} is held"))
            });
        }
        self.prog.sum_ok.insert(key);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn parallel(
        &mut self,
        slot: usize,
        name: &str,
        lo: i64,
        extent: i64,
        pre: &Group,
        post: &Group,
        body: &[Op],
    ) -> Result<(), Finding> {
        let mut sets = Vec::new();
        for v in lo..lo + extent {
            self.m.slots[slot] = v;
            sets.push(self.perms(pre).map_err(|f| retag(f, &Self::describe(name, When::Pre(v))))?);
        }
        self.split_frame(name, &sets)?;
        for (v, s) in (lo..lo + extent).zip(sets) {
            self.m.slots[slot] = v;
            let frame = Self::frame_of(&s);
            self.values(pre, &frame, FindingKind::InvariantViolation, &Self::describe(name, When::Pre(v)))?;
            self.frames.push(frame);
            let r = self.exec(body);
            let frame = self.frames.pop().expect("iteration frame");
            r?;
            self.m.slots[slot] = v;
            self.values(post, &frame, FindingKind::InvariantViolation, &Self::describe(name, When::Post(v)))?;
        }
        Ok(())
    }
}

fn retag(mut f: Finding, context: &str) -> Finding {
    f.message = format!("{context}: {}", f.message);
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::lower_annotated;
    use crate::check::eval_reference;
    use crate::parse::{parse_pipeline, parse_schedule};

    fn nest(src: &str, sched: &str) -> LoopNest {
        let p = parse_pipeline(src).unwrap();
        lower_annotated(&p, &parse_schedule(sched, &p).unwrap()).unwrap()
    }

    const BLUR: &str = "pipeline blur(inp[x in 0..blur_y.x.max + 2, y in 0..blur_y.y.max + 2]) -> blur_y[x in 0..16, y in 0..16] {
        blur_x(x, y) = (inp(x, y) + inp(x + 1, y) + inp(x + 2, y)) / 3;
        blur_y(x, y) = (blur_x(x, y) + blur_x(x, y + 1) + blur_x(x, y + 2)) / 3;
    }";

    const TILED: &str = "blur_y.split(y, yo, yi, 8).split(x, xo, xi, 2).reorder(xi, xo, yi, yo).parallel(yo).unroll(xi);
        blur_x.store_at(blur_y, yo).compute_at(blur_y, yi);";

    #[test]
    fn lowered_blur_matches_reference() {
        let n = nest(BLUR, TILED);
        let p = &n.pipeline;
        for seed in 0..3 {
            let v = Valuation::random(p, seed);
            assert_eq!(run_lowered(&n, &v).unwrap(), eval_reference(p, &v).unwrap());
        }
    }

    #[test]
    fn annotations_hold_on_blur() {
        for sched in ["", TILED, "blur_y.parallel(y); blur_x.parallel(y);"] {
            let n = nest(BLUR, sched);
            let r = check_annotations(&n, &Valuation::random(&n.pipeline, 1));
            assert!(r.passed(), "{sched}: {:?}", r.findings);
        }
    }

    #[test]
    fn parallel_reduction_is_a_race() {
        let src = "pipeline s(inp[i in 0..8]) -> s[x in 0..1] { rdom r in 0..8; s(x) = 0; s(0) = s(0) + inp(r); s.invariant(r, true); }";
        let n = nest(src, "s.parallel(r);");
        let r = check_annotations(&n, &Valuation::random(&n.pipeline, 0));
        assert!(r.has(FindingKind::Race), "{:?}", r.findings);
    }
}
