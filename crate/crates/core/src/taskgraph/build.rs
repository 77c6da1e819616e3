//! Iterative task and dependency refinement.

use parking_lot::{Mutex, MutexGuard};

use super::task::{local_edges, precedes_deps, Deps, Mode, Refiner, Subs, Task};
use super::TaskGraph;
use crate::error::{Error, Result};
use crate::par;
use crate::trees::BlockTree;

/// How edge sparsification runs within one refinement step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SparsifyStrategy {
    /// Redundant edges are found on the graph as it stands after dependency
    /// refinement and removed afterwards. Independent of scheduling.
    Snapshot,
    /// Edges are removed in place while the whole neighbourhood is locked,
    /// locks taken in ascending sequence order. Which redundant edges are
    /// removed may depend on scheduling.
    Locked,
}

#[derive(Clone, Copy, Debug)]
pub struct DagConfig {
    pub mode: Mode,
    /// Blocks with `min(rows, cols) <= stop_size` are not refined.
    pub stop_size: usize,
    pub sparsify: bool,
    /// Longest alternative path searched by sparsification; 0 is unlimited.
    pub max_path_len: usize,
    pub strategy: SparsifyStrategy,
    /// Target size of work chunks in the parallel build.
    pub chunk_size: usize,
}

impl Default for DagConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Std,
            stop_size: 0,
            sparsify: false,
            max_path_len: 2,
            strategy: SparsifyStrategy::Snapshot,
            chunk_size: 256,
        }
    }
}

impl DagConfig {
    pub fn new(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn sparsified(mut self) -> Self {
        self.sparsify = true;
        self
    }
}

pub(crate) struct Node {
    pub task: Task,
    pub succ: Mutex<Vec<u32>>,
    /// Contiguous ids of the sub-tasks once refined.
    pub subs: Option<(u32, u32)>,
}

impl Node {
    fn new(task: Task) -> Self {
        Self { task, succ: Mutex::new(Vec::new()), subs: None }
    }

    fn sub_ids(&self) -> Option<std::ops::Range<u32>> {
        self.subs.map(|(a, b)| a..b)
    }
}

/// Successors of `g` after refinement: its sub-tasks or itself.
fn expand(arena: &[Node], g: u32) -> std::ops::Range<u32> {
    arena[g as usize].sub_ids().unwrap_or(g..g + 1)
}

/// Replaces each edge into a refined successor by edges into the
/// successor's sub-tasks that `g` precedes. Returns whether `S_g` changed.
pub(crate) fn refine_loc_deps(tree: &BlockTree, arena: &[Node], g: u32) -> bool {
    let node = &arena[g as usize];
    let mut succ = node.succ.lock();
    if succ.iter().all(|&s| arena[s as usize].subs.is_none()) {
        return false;
    }
    let out = node.task.out_deps(tree);
    let mut next = Vec::with_capacity(succ.len());
    for &s in succ.iter() {
        match arena[s as usize].sub_ids() {
            None => next.push(s),
            Some(subs) => {
                for s2 in subs {
                    if precedes_deps(&out, &arena[s2 as usize].task.in_deps(tree)) {
                        next.push(s2);
                    }
                }
            }
        }
    }
    next.sort_unstable();
    let changed = next != *succ;
    *succ = next;
    changed
}

/// Edges between the sub-tasks of `g` and the successors of `g`
/// (or their sub-tasks).
pub(crate) fn refine_sub_deps(tree: &BlockTree, arena: &[Node], g: u32) {
    let subs = arena[g as usize].sub_ids().expect("refined task");
    let outs: Vec<Deps> = subs.clone().map(|t| arena[t as usize].task.out_deps(tree)).collect();
    let mut added: Vec<Vec<u32>> = vec![Vec::new(); outs.len()];
    let succ = arena[g as usize].succ.lock().clone();
    for s in succ {
        for s2 in expand(arena, s) {
            let ins = arena[s2 as usize].task.in_deps(tree);
            for (k, out) in outs.iter().enumerate() {
                if precedes_deps(out, &ins) {
                    added[k].push(s2);
                }
            }
        }
    }
    for (k, t) in subs.enumerate() {
        if !added[k].is_empty() {
            let mut list = arena[t as usize].succ.lock();
            list.extend_from_slice(&added[k]);
            list.sort_unstable();
            list.dedup();
        }
    }
}

/// Neighbourhood of `g`: its sub-tasks (or itself) and its successors'
/// sub-tasks (or the successors), sorted by id.
fn neighbourhood(arena: &[Node], g: u32, succ_of_g: &[u32]) -> Vec<u32> {
    let mut n: Vec<u32> = expand(arena, g).collect();
    for &s in succ_of_g {
        n.extend(expand(arena, s));
    }
    n.sort_unstable();
    n.dedup();
    n
}

/// Direct successors of `t` that are also reachable from another direct
/// successor by a path of at most `max_len - 1` further edges inside `hood`.
fn redundant<'a, F>(t_succ: &[u32], hood: &[u32], max_len: usize, succ: F) -> Vec<u32>
where
    F: Fn(u32) -> &'a [u32],
{
    let inside = |x: u32| hood.binary_search(&x).is_ok();
    let direct: Vec<u32> = t_succ.iter().copied().filter(|&x| inside(x)).collect();
    let mut seen: Vec<u32> = Vec::new();
    let mut frontier = direct.clone();
    let mut depth = 1;
    while !frontier.is_empty() && (max_len == 0 || depth < max_len) {
        let mut next = Vec::new();
        for &x in &frontier {
            for &y in succ(x) {
                if inside(y) {
                    if let Err(pos) = seen.binary_search(&y) {
                        seen.insert(pos, y);
                        next.push(y);
                    }
                }
            }
        }
        frontier = next;
        depth += 1;
    }
    direct.into_iter().filter(|x| seen.binary_search(x).is_ok()).collect()
}

fn remove_sorted(list: &mut Vec<u32>, gone: &[u32]) {
    list.retain(|x| gone.binary_search(x).is_err());
}

/// Snapshot sparsification of one workset item: redundant edges of each task
/// owned by `g`, computed without modifying the graph.
fn sparsify_snapshot(arena: &[Node], g: u32, succ_of_g: &[u32], max_len: usize) -> Vec<(u32, Vec<u32>)> {
    let hood = neighbourhood(arena, g, succ_of_g);
    let lists: Vec<Vec<u32>> = hood.iter().map(|&x| arena[x as usize].succ.lock().clone()).collect();
    let succ = |x: u32| -> &[u32] {
        match hood.binary_search(&x) {
            Ok(i) => &lists[i],
            Err(_) => &[],
        }
    };
    let mut out = Vec::new();
    for t in expand(arena, g) {
        let gone = redundant(succ(t), &hood, max_len, succ);
        if !gone.is_empty() {
            out.push((t, gone));
        }
    }
    out
}

/// Locked sparsification: all neighbourhood nodes are locked in ascending
/// sequence order before edges of the owned tasks are removed in place.
fn sparsify_locked(arena: &[Node], g: u32, succ_of_g: &[u32], max_len: usize) {
    let hood = neighbourhood(arena, g, succ_of_g);
    let mut order: Vec<usize> = (0..hood.len()).collect();
    order.sort_by_key(|&i| arena[hood[i] as usize].task.seq);
    let mut guards: Vec<Option<MutexGuard<'_, Vec<u32>>>> = (0..hood.len()).map(|_| None).collect();
    for i in order {
        guards[i] = Some(arena[hood[i] as usize].succ.lock());
    }
    for t in expand(arena, g) {
        let gone = {
            let succ = |x: u32| -> &[u32] {
                match hood.binary_search(&x) {
                    Ok(i) => guards[i].as_deref().map(|v| v.as_slice()).unwrap_or(&[]),
                    Err(_) => &[],
                }
            };
            redundant(succ(t), &hood, max_len, succ)
        };
        if !gone.is_empty() {
            let i = hood.binary_search(&t).expect("own task in neighbourhood");
            remove_sorted(guards[i].as_mut().expect("locked"), &gone);
        }
    }
}

fn rechunk(chunks: Vec<Vec<u32>>, target: usize) -> Vec<Vec<u32>> {
    let target = target.max(1);
    let mut out: Vec<Vec<u32>> = Vec::new();
    for c in chunks {
        if c.is_empty() {
            continue;
        }
        if c.len() > 2 * target {
            out.extend(c.chunks(target).map(|p| p.to_vec()));
            continue;
        }
        match out.last_mut() {
            Some(last) if last.len() < target / 2 || c.len() < target / 2 => {
                if last.len() + c.len() <= 2 * target {
                    last.extend(c);
                } else {
                    out.push(c);
                }
            }
            _ => out.push(c),
        }
    }
    out
}

fn map_chunks<R: Send>(
    parallel: bool,
    chunks: &[Vec<u32>],
    f: impl Fn(u32) -> R + Sync + Send,
) -> Vec<Vec<R>> {
    let run = |c: &Vec<u32>| c.iter().map(|&g| f(g)).collect::<Vec<R>>();
    if parallel {
        par::map(chunks, run)
    } else {
        chunks.iter().map(run).collect()
    }
}

/// Alternating task and dependency refinement from `root` until no task
/// changes, with chunked parallel loops when `parallel`.
pub(crate) fn refine_graph(
    tree: &BlockTree,
    root: Task,
    refiner: Refiner<'_>,
    cfg: &DagConfig,
    parallel: bool,
) -> Result<(Vec<Task>, Vec<(u32, u32)>)> {
    let mut arena = vec![Node::new(root)];
    let mut chunks: Vec<Vec<u32>> = vec![vec![0]];
    let mut retired: Vec<u32> = Vec::new();
    while !chunks.is_empty() {
        // task refinement
        let refined: Vec<Vec<Option<(Subs, Vec<(u8, u8)>)>>> = {
            let arena = &arena;
            map_chunks(parallel, &chunks, |g| {
                refiner.refine(&arena[g as usize].task).map(|subs| {
                    let e = local_edges(tree, &subs).to_vec();
                    (subs, e)
                })
            })
        };
        for (chunk, res) in chunks.iter().zip(refined) {
            for (&g, r) in chunk.iter().zip(res) {
                let Some((subs, edges)) = r else { continue };
                let start = arena.len() as u32;
                arena.extend(subs.into_iter().map(Node::new));
                for (i, j) in edges {
                    arena[(start + i as u32) as usize].succ.get_mut().push(start + j as u32);
                }
                arena[g as usize].subs = Some((start, arena.len() as u32));
            }
        }

        // dependency refinement
        let arena_ref = &arena;
        let changed: Vec<Vec<bool>> = map_chunks(parallel, &chunks, |g| {
            if arena_ref[g as usize].subs.is_some() {
                refine_sub_deps(tree, arena_ref, g);
                true
            } else {
                refine_loc_deps(tree, arena_ref, g)
            }
        });

        if cfg.sparsify {
            let max_len = cfg.max_path_len;
            match cfg.strategy {
                SparsifyStrategy::Snapshot => {
                    let removals = map_chunks(parallel, &chunks, |g| {
                        let succ = arena_ref[g as usize].succ.lock().clone();
                        sparsify_snapshot(arena_ref, g, &succ, max_len)
                    });
                    for (t, gone) in removals.into_iter().flatten().flatten() {
                        remove_sorted(arena[t as usize].succ.get_mut(), &gone);
                    }
                }
                SparsifyStrategy::Locked => {
                    map_chunks(parallel, &chunks, |g| {
                        let succ = arena_ref[g as usize].succ.lock().clone();
                        sparsify_locked(arena_ref, g, &succ, max_len)
                    });
                }
            }
        }

        let mut next: Vec<Vec<u32>> = Vec::with_capacity(chunks.len());
        for (chunk, flags) in chunks.iter().zip(changed) {
            let mut nc = Vec::new();
            for (&g, ch) in chunk.iter().zip(flags) {
                let node = &mut arena[g as usize];
                if let Some(range) = node.sub_ids() {
                    node.succ.get_mut().clear();
                    node.succ.get_mut().shrink_to_fit();
                    nc.extend(range);
                } else if ch {
                    nc.push(g);
                } else {
                    retired.push(g);
                }
            }
            next.push(nc);
        }
        chunks = rechunk(next, cfg.chunk_size);
    }

    retired.sort_by_key(|&g| arena[g as usize].task.seq);
    let mut index = vec![u32::MAX; arena.len()];
    for (i, &g) in retired.iter().enumerate() {
        index[g as usize] = i as u32;
    }
    let mut edges = Vec::new();
    for (i, &g) in retired.iter().enumerate() {
        for &s in arena[g as usize].succ.get_mut().iter() {
            let j = index[s as usize];
            debug_assert!(j != u32::MAX, "edge into a refined task");
            if j == u32::MAX {
                return Err(Error::NotRefinable("edge into a refined task".into()));
            }
            edges.push((i as u32, j));
        }
    }
    let tasks = retired.iter().map(|&g| arena[g as usize].task).collect();
    Ok((tasks, edges))
}

fn check_combined(cfg: &DagConfig) -> Result<()> {
    if cfg.sparsify && cfg.mode == Mode::AccuCombined {
        return Err(Error::SparsifyCombined);
    }
    Ok(())
}

/// Sequential graph construction for H-LU of the matrix over `tree`.
pub fn compute_dag(tree: &BlockTree, cfg: &DagConfig) -> Result<TaskGraph> {
    build(tree, cfg, false)
}

/// Parallel graph construction on `workers` threads.
pub fn par_compute_dag(tree: &BlockTree, cfg: &DagConfig, workers: usize) -> Result<TaskGraph> {
    if workers == 0 {
        return Err(Error::InvalidParameter("workers must be positive".into()));
    }
    par::run_with(workers, || build(tree, cfg, true))
}

/// Graph construction from an arbitrary root task with the refinement rules
/// of `cfg.mode`.
pub fn compute_dag_from(tree: &BlockTree, root: Task, cfg: &DagConfig) -> Result<TaskGraph> {
    check_combined(cfg)?;
    let refiner = Refiner::new(tree, cfg.mode, cfg.stop_size);
    let (tasks, edges) = refine_graph(tree, root, refiner, cfg, false)?;
    TaskGraph::checked(cfg.mode, tasks, edges)
}

fn build(tree: &BlockTree, cfg: &DagConfig, parallel: bool) -> Result<TaskGraph> {
    check_combined(cfg)?;
    if cfg.mode == Mode::AccuMerged {
        return super::merged::build_merged(tree, cfg, parallel);
    }
    let refiner = Refiner::new(tree, cfg.mode, cfg.stop_size);
    let root = Task::root_lu(tree, cfg.mode);
    let (tasks, edges) = refine_graph(tree, root, refiner, cfg, parallel)?;
    TaskGraph::checked(cfg.mode, tasks, edges)
}
