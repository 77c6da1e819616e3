//! Execution of task graphs by dependency counting.

use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;

use crate::accumulator::{add_upd, apply_upd, shift_upd, AccumulatorMap};
use crate::arith::{hlu, hmul, htrsl, htrsu, leaf_lu, leaf_solve_lower, leaf_solve_upper};
use crate::error::{Error, Result};
use crate::hmatrix::{Ctx, HMatrix, HRef};
use crate::taskgraph::{Mat, Mode, Operand, Task, TaskGraph, TaskKind};
use crate::trees::BlockTree;

/// `A` together with the factors `L` and `U` over the same block tree.
#[derive(Clone, Debug)]
pub struct LuOperands {
    pub a: HMatrix,
    pub l: HMatrix,
    pub u: HMatrix,
}

impl LuOperands {
    pub fn new(a: HMatrix) -> Self {
        let l = HMatrix::zeros(a.tree().clone(), a.policy());
        let u = HMatrix::zeros(a.tree().clone(), a.policy());
        Self { a, l, u }
    }

    pub fn get(&self, m: Mat) -> &HMatrix {
        match m {
            Mat::A => &self.a,
            Mat::L => &self.l,
            Mat::U => &self.u,
        }
    }

    pub fn tree(&self) -> &Arc<BlockTree> {
        self.a.tree()
    }

    fn href(&self, o: Operand) -> HRef<'_> {
        HRef::new(self.get(o.mat), o.block)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecReport {
    pub n: usize,
    pub mode: Mode,
    pub workers: usize,
    pub exec_ms: f64,
    pub tasks: usize,
    pub truncations: usize,
    /// Begin and end of each task in nanoseconds since the start, if recorded.
    pub times: Option<Vec<(u64, u64)>>,
}

impl ExecReport {
    pub const CSV_HEADER: &'static str = "n,mode,workers,exec_ms,tasks,truncations";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{},{}",
            self.n, self.mode, self.workers, self.exec_ms, self.tasks, self.truncations
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ExecOptions {
    pub workers: usize,
    pub record_times: bool,
}

impl ExecOptions {
    pub fn new(workers: usize) -> Self {
        Self { workers, record_times: false }
    }
}

fn run_task<'a>(t: &Task, ops: &'a LuOperands, accs: &AccumulatorMap<'a>, ctx: &Ctx) -> Result<()> {
    let h = |i: usize| ops.href(t.ops[i]);
    match t.kind {
        TaskKind::LeafFactor => leaf_lu(&ops.a, &ops.l, &ops.u, t.ops[0].block),
        TaskKind::Hlu => hlu(&ops.a, &ops.l, &ops.u, t.ops[0].block, ctx),
        TaskKind::LeafSolveL => leaf_solve_lower(h(0), h(1), h(2)),
        TaskKind::LeafSolveU => leaf_solve_upper(h(0), h(1), h(2)),
        TaskKind::Htrsl => htrsl(h(0), h(1), h(2), ctx),
        TaskKind::Htrsu => htrsu(h(0), h(1), h(2), ctx),
        TaskKind::Hmul | TaskKind::LeafUpdate => hmul(t.alpha, h(0), h(1), h(2), ctx),
        TaskKind::AddUpd => add_upd(t.alpha, h(0), h(1), h(2), accs),
        TaskKind::ShiftUpd => shift_upd(h(0), accs, ctx),
        TaskKind::ApplyUpd => apply_upd(h(0), accs, ctx),
    }
}

fn report(g: &TaskGraph, ops: &LuOperands, workers: usize, start: Instant, tasks: usize, trunc: usize) -> ExecReport {
    ExecReport {
        n: ops.a.nrows(),
        mode: g.mode(),
        workers,
        exec_ms: start.elapsed().as_secs_f64() * 1e3,
        tasks,
        truncations: trunc,
        times: None,
    }
}

struct State<'a> {
    g: &'a TaskGraph,
    ops: &'a LuOperands,
    accs: AccumulatorMap<'a>,
    ctx: &'a Ctx,
    pending: Vec<AtomicU32>,
    executed: AtomicUsize,
    failed: AtomicBool,
    error: Mutex<Option<Error>>,
    start: Instant,
    times: Option<Vec<(AtomicU64, AtomicU64)>>,
}

impl<'a> State<'a> {
    fn new(g: &'a TaskGraph, ops: &'a LuOperands, ctx: &'a Ctx, record: bool) -> Self {
        Self {
            g,
            ops,
            accs: AccumulatorMap::new(ops.tree().clone()),
            ctx,
            pending: g.in_degrees().into_iter().map(AtomicU32::new).collect(),
            executed: AtomicUsize::new(0),
            failed: AtomicBool::new(false),
            error: Mutex::new(None),
            start: Instant::now(),
            times: record.then(|| (0..g.len()).map(|_| (AtomicU64::new(0), AtomicU64::new(0))).collect()),
        }
    }

    fn now(&self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }

    /// Runs task `i` and returns the successors that became ready.
    fn step(&self, i: usize, ready: &mut Vec<u32>) {
        if self.failed.load(Ordering::Acquire) {
            return;
        }
        let begin = self.now();
        if let Err(e) = run_task(self.g.node(i), self.ops, &self.accs, self.ctx) {
            self.failed.store(true, Ordering::Release);
            self.error.lock().get_or_insert(e);
            return;
        }
        if let Some(t) = &self.times {
            t[i].0.store(begin, Ordering::Relaxed);
            t[i].1.store(self.now(), Ordering::Relaxed);
        }
        self.executed.fetch_add(1, Ordering::AcqRel);
        for &s in self.g.successors(i) {
            if self.pending[s as usize].fetch_sub(1, Ordering::AcqRel) == 1 {
                ready.push(s);
            }
        }
    }

    fn finish(self, workers: usize, trunc0: usize) -> Result<ExecReport> {
        if let Some(e) = self.error.into_inner() {
            return Err(e);
        }
        let done = self.executed.into_inner();
        if done < self.g.len() {
            return Err(Error::Deadlock { remaining: self.g.len() - done });
        }
        let mut r = report(self.g, self.ops, workers, self.start, done, self.ctx.truncations() - trunc0);
        r.times = self
            .times
            .map(|t| t.into_iter().map(|(a, b)| (a.into_inner(), b.into_inner())).collect());
        Ok(r)
    }
}

#[cfg(feature = "parallel")]
fn schedule(state: &State<'_>, roots: Vec<u32>, workers: usize) {
    fn spawn<'s, 'a: 's>(s: &rayon::ScopeFifo<'s>, state: &'s State<'a>, i: u32) {
        s.spawn_fifo(move |s| {
            let mut ready = Vec::new();
            state.step(i as usize, &mut ready);
            for r in ready {
                spawn(s, state, r);
            }
        });
    }
    crate::par::run_with(workers, || {
        rayon::scope_fifo(|s| {
            for r in roots {
                spawn(s, state, r);
            }
        })
    });
}

#[cfg(not(feature = "parallel"))]
fn schedule(state: &State<'_>, roots: Vec<u32>, _workers: usize) {
    let mut queue = std::collections::VecDeque::from(roots);
    let mut ready = Vec::new();
    while let Some(i) = queue.pop_front() {
        state.step(i as usize, &mut ready);
        queue.extend(ready.drain(..));
    }
}

/// Runs every task once all its predecessors have finished, on `workers`
/// threads.
pub fn execute(g: &TaskGraph, ops: &LuOperands, workers: usize, ctx: &Ctx) -> Result<ExecReport> {
    execute_with(g, ops, &ExecOptions::new(workers), ctx)
}

pub fn execute_with(g: &TaskGraph, ops: &LuOperands, opts: &ExecOptions, ctx: &Ctx) -> Result<ExecReport> {
    if opts.workers == 0 {
        return Err(Error::InvalidParameter("workers must be positive".into()));
    }
    let trunc0 = ctx.truncations();
    let state = State::new(g, ops, ctx, opts.record_times);
    let roots: Vec<u32> = (0..g.len() as u32).filter(|&i| state.pending[i as usize].load(Ordering::Relaxed) == 0).collect();
    schedule(&state, roots, opts.workers);
    state.finish(opts.workers, trunc0)
}

/// Single-threaded execution in (depth, sequence) order.
pub fn execute_sequential(g: &TaskGraph, ops: &LuOperands, ctx: &Ctx) -> Result<ExecReport> {
    let order = g.depth_order().ok_or(Error::Deadlock { remaining: g.len() })?;
    execute_in_order(g, ops, &order, ctx)
}

/// Single-threaded execution in a given order, which must be topological.
pub fn execute_in_order(g: &TaskGraph, ops: &LuOperands, order: &[u32], ctx: &Ctx) -> Result<ExecReport> {
    let mut pos = vec![u32::MAX; g.len()];
    for (k, &v) in order.iter().enumerate() {
        pos[v as usize] = k as u32;
    }
    if order.len() != g.len() || pos.contains(&u32::MAX) {
        return Err(Error::InvalidParameter("order is not a permutation of the tasks".into()));
    }
    if g.edges().any(|(a, b)| pos[a as usize] > pos[b as usize]) {
        return Err(Error::InvalidParameter("order violates an edge".into()));
    }
    let trunc0 = ctx.truncations();
    let start = Instant::now();
    let accs = AccumulatorMap::new(ops.tree().clone());
    for &i in order {
        run_task(g.node(i as usize), ops, &accs, ctx)?;
    }
    Ok(report(g, ops, 1, start, g.len(), ctx.truncations() - trunc0))
}
