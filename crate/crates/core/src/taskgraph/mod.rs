//! Task graphs for H-LU built by iterative refinement of tasks and their
//! data dependencies, with optional edge sparsification and a merged
//! variant for accumulator arithmetic.

mod build;
mod merged;
mod task;

use std::fmt::Write as _;

pub use build::{compute_dag, compute_dag_from, par_compute_dag, DagConfig, SparsifyStrategy};
pub use task::{
    local_edges, precedes, precedes_deps, DataDep, DepTable, Deps, Mat, MatrixId, Mode, Operand, Refiner, Seq,
    Subs, Task, TaskKind,
};

use crate::error::{Error, Result};
use crate::trees::BlockTree;

/// Final tasks sorted by sequence with edges in compressed adjacency form.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGraph {
    mode: Mode,
    nodes: Vec<Task>,
    offsets: Vec<u32>,
    targets: Vec<u32>,
}

impl TaskGraph {
    /// Graph from nodes and edges; duplicate edges are merged.
    pub fn new(mode: Mode, nodes: Vec<Task>, mut edges: Vec<(u32, u32)>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let mut offsets = vec![0u32; nodes.len() + 1];
        for &(a, _) in &edges {
            offsets[a as usize + 1] += 1;
        }
        for i in 0..nodes.len() {
            offsets[i + 1] += offsets[i];
        }
        let targets = edges.into_iter().map(|(_, b)| b).collect();
        Self { mode, nodes, offsets, targets }
    }

    /// As [`TaskGraph::new`], failing with [`Error::Cycle`] on a cyclic graph.
    pub fn checked(mode: Mode, nodes: Vec<Task>, edges: Vec<(u32, u32)>) -> Result<Self> {
        let g = Self::new(mode, nodes, edges);
        if g.check_acyclic() {
            Ok(g)
        } else {
            Err(Error::Cycle)
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Task] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Task {
        &self.nodes[i]
    }

    pub fn successors(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.nodes.len()).flat_map(move |i| self.successors(i).iter().map(move |&j| (i as u32, j)))
    }

    pub fn has_edge(&self, a: usize, b: u32) -> bool {
        self.successors(a).binary_search(&b).is_ok()
    }

    /// (node count, edge count)
    pub fn stats(&self) -> (usize, usize) {
        (self.len(), self.num_edges())
    }

    pub fn in_degrees(&self) -> Vec<u32> {
        let mut d = vec![0u32; self.len()];
        for &t in &self.targets {
            d[t as usize] += 1;
        }
        d
    }

    pub fn check_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Kahn's algorithm; `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<u32>> {
        let mut indeg = self.in_degrees();
        let mut order: Vec<u32> = (0..self.len() as u32).filter(|&i| indeg[i as usize] == 0).collect();
        let mut head = 0;
        while head < order.len() {
            let v = order[head] as usize;
            head += 1;
            for &s in self.successors(v) {
                indeg[s as usize] -= 1;
                if indeg[s as usize] == 0 {
                    order.push(s);
                }
            }
        }
        (order.len() == self.len()).then_some(order)
    }

    /// Longest path length from any source, per node.
    pub fn depths(&self) -> Option<Vec<u32>> {
        let order = self.topological_order()?;
        let mut depth = vec![0u32; self.len()];
        for &v in &order {
            for &s in self.successors(v as usize) {
                depth[s as usize] = depth[s as usize].max(depth[v as usize] + 1);
            }
        }
        Some(depth)
    }

    /// Topological order by (depth, sequence).
    pub fn depth_order(&self) -> Option<Vec<u32>> {
        let depth = self.depths()?;
        let mut order: Vec<u32> = (0..self.len() as u32).collect();
        order.sort_by_key(|&i| (depth[i as usize], self.nodes[i as usize].seq));
        Some(order)
    }

    /// Reachability bit rows: bit `j` of row `i` is set iff a non-empty path
    /// leads from `i` to `j`. Quadratic memory, meant for small graphs.
    pub fn transitive_closure(&self) -> Option<Vec<Vec<u64>>> {
        let order = self.topological_order()?;
        let words = self.len().div_ceil(64);
        let mut rows = vec![vec![0u64; words]; self.len()];
        for &v in order.iter().rev() {
            let v = v as usize;
            let mut row = vec![0u64; words];
            for &s in self.successors(v) {
                let s = s as usize;
                row[s / 64] |= 1 << (s % 64);
                for (w, x) in row.iter_mut().zip(&rows[s]) {
                    *w |= x;
                }
            }
            rows[v] = row;
        }
        Some(rows)
    }

    /// The graph without every edge `(u, v)` for which a longer path from `u`
    /// to `v` exists. `None` for a cyclic graph.
    pub fn transitive_reduction(&self) -> Option<TaskGraph> {
        let depth = self.depths()?;
        let idx: Vec<u32> = (0..self.len() as u32).collect();
        let chunks: Vec<&[u32]> = idx.chunks(4096).collect();
        let kept = crate::par::map(&chunks, |chunk| {
            let mut stamp = vec![u32::MAX; self.len()];
            let mut stack = Vec::new();
            let mut out = Vec::new();
            for &u in *chunk {
                let succ = self.successors(u as usize);
                if succ.len() < 2 {
                    out.extend(succ.iter().map(|&v| (u, v)));
                    continue;
                }
                // only nodes not deeper than the deepest successor can lie
                // on a path to one
                let max = succ.iter().map(|&v| depth[v as usize]).max().unwrap_or(0);
                for &w in succ {
                    stack.push(w);
                    while let Some(x) = stack.pop() {
                        for &y in self.successors(x as usize) {
                            if depth[y as usize] <= max && stamp[y as usize] != u {
                                stamp[y as usize] = u;
                                stack.push(y);
                            }
                        }
                    }
                }
                out.extend(succ.iter().filter(|&&v| stamp[v as usize] != u).map(|&v| (u, v)));
            }
            out
        });
        Some(TaskGraph::new(self.mode, self.nodes.clone(), kept.concat()))
    }

    /// True if a non-empty path leads from `a` to `b`. `pos` is the position
    /// of each node in a topological order, used to prune the search.
    pub fn reaches(&self, a: u32, b: u32, pos: &[u32], stamp: &mut [u32], mark: u32) -> bool {
        let mut stack = vec![a];
        while let Some(v) = stack.pop() {
            for &s in self.successors(v as usize) {
                if s == b {
                    return true;
                }
                if pos[s as usize] < pos[b as usize] && stamp[s as usize] != mark {
                    stamp[s as usize] = mark;
                    stack.push(s);
                }
            }
        }
        false
    }

    /// Same nodes and the same reachability relation, checked edge by edge:
    /// every edge of either graph is a path in the other.
    pub fn same_reachability(&self, other: &TaskGraph) -> bool {
        if self.nodes != other.nodes {
            return false;
        }
        let covered = |g: &TaskGraph, h: &TaskGraph| -> bool {
            let Some(order) = h.topological_order() else { return false };
            let mut pos = vec![0u32; h.len()];
            for (k, &v) in order.iter().enumerate() {
                pos[v as usize] = k as u32;
            }
            let mut stamp = vec![0u32; h.len()];
            let mut mark = 0;
            g.edges().all(|(a, b)| {
                h.has_edge(a as usize, b) || {
                    mark += 1;
                    h.reaches(a, b, &pos, &mut stamp, mark)
                }
            })
        };
        covered(self, other) && covered(other, self)
    }

    /// DOT with one node per task labelled by kind and block ranges.
    pub fn to_dot(&self, tree: &BlockTree) -> String {
        let mut out = String::from("digraph hlu {\n  node [shape=box, style=filled];\n");
        for (i, t) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "  n{i} [label=\"{}\", fillcolor={}];", t.label(tree), t.kind.color());
        }
        for (a, b) in self.edges() {
            let _ = writeln!(out, "  n{a} -> n{b};");
        }
        out.push_str("}\n");
        out
    }
}

/// Acyclicity of an arbitrary edge list over `n` nodes.
pub fn is_acyclic(n: usize, edges: &[(u32, u32)]) -> bool {
    let g = TaskGraph::new(Mode::Std, vec![dummy_task(); n], edges.to_vec());
    g.check_acyclic()
}

fn dummy_task() -> Task {
    let op = Operand::new(Mat::A, crate::trees::BlockId(0));
    Task::new(TaskKind::LeafFactor, DepTable::Std, &[op], Seq::root(1))
}

/// Build statistics, CSV columns `n,mode,nodes,edges,build_ms`.
#[derive(Clone, Debug, PartialEq)]
pub struct DagStats {
    pub n: usize,
    pub mode: Mode,
    pub nodes: usize,
    pub edges: usize,
    pub build_ms: f64,
}

impl DagStats {
    pub const CSV_HEADER: &'static str = "n,mode,nodes,edges,build_ms";

    pub fn to_csv_row(&self) -> String {
        format!("{},{},{},{},{:.3}", self.n, self.mode, self.nodes, self.edges, self.build_ms)
    }
}
