//! Independent oracles shared by the integration tests: an exhaustive trace
//! of the leaf operations of recursive H-LU with read/write sets, and helpers
//! to compare task graphs against it.

#![allow(dead_code)]

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use hmat_dag::problems::{Problem, ProblemKind};
use hmat_dag::taskgraph::{Mat, Operand, TaskGraph, TaskKind};
use hmat_dag::trees::{build_block_tree, build_cluster_tree, BlockId, BlockTree, Geometry, IndexSet};

/// One leaf operation of the recursion in program order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceOp {
    pub kind: TaskKind,
    pub ops: Vec<Operand>,
}

type Access = (Mat, IndexSet, IndexSet);

impl TraceOp {
    fn access(tree: &BlockTree, o: Operand) -> Access {
        let n = tree.node(o.block);
        (o.mat, n.rows, n.cols)
    }

    pub fn reads(&self, tree: &BlockTree) -> Vec<Access> {
        let a = |i: usize| Self::access(tree, self.ops[i]);
        match self.kind {
            TaskKind::LeafFactor => vec![a(0)],
            TaskKind::LeafSolveL | TaskKind::LeafSolveU => vec![a(0), a(1)],
            TaskKind::LeafUpdate => vec![a(0), a(1), a(2)],
            k => panic!("{k:?} is not a leaf operation"),
        }
    }

    pub fn writes(&self, tree: &BlockTree) -> Vec<Access> {
        match self.kind {
            TaskKind::LeafFactor => {
                let b = self.ops[0].block;
                vec![
                    Self::access(tree, Operand::new(Mat::L, b)),
                    Self::access(tree, Operand::new(Mat::U, b)),
                ]
            }
            _ => vec![Self::access(tree, self.ops[2])],
        }
    }

    pub fn describe(&self, tree: &BlockTree) -> String {
        let mut s = format!("{:?}", self.kind);
        for o in &self.ops {
            let n = tree.node(o.block);
            let _ = write!(s, " {:?}{}x{}", o.mat, n.rows, n.cols);
        }
        s
    }
}

fn overlap(x: &Access, y: &Access) -> bool {
    x.0 == y.0 && x.1.intersects(&y.1) && x.2.intersects(&y.2)
}

struct Tracer<'a> {
    tree: &'a BlockTree,
    out: Vec<TraceOp>,
}

impl Tracer<'_> {
    fn op(&self, m: Mat, b: BlockId, i: usize, j: usize) -> Operand {
        Operand::new(m, self.tree.child(b, i, j))
    }

    fn push(&mut self, kind: TaskKind, ops: &[Operand]) {
        self.out.push(TraceOp { kind, ops: ops.to_vec() });
    }

    fn lu(&mut self, b: BlockId) {
        let node = self.tree.node(b);
        if node.is_leaf() {
            return self.push(TaskKind::LeafFactor, &[Operand::new(Mat::A, b)]);
        }
        let k = node.row_sons();
        for i in 0..k {
            self.lu(self.tree.child(b, i, i));
            for j in i + 1..k {
                self.solve_u(
                    Operand::new(Mat::U, self.tree.child(b, i, i)),
                    self.op(Mat::A, b, j, i),
                    self.op(Mat::L, b, j, i),
                );
                self.solve_l(
                    Operand::new(Mat::L, self.tree.child(b, i, i)),
                    self.op(Mat::A, b, i, j),
                    self.op(Mat::U, b, i, j),
                );
            }
            for j in i + 1..k {
                for l in i + 1..k {
                    self.mul(self.op(Mat::L, b, j, i), self.op(Mat::U, b, i, l), self.op(Mat::A, b, j, l));
                }
            }
        }
    }

    /// `L X = M` with `L` lower triangular.
    fn solve_l(&mut self, l: Operand, m: Operand, x: Operand) {
        if self.tree.is_leaf(m.block) {
            return self.push(TaskKind::LeafSolveL, &[l, m, x]);
        }
        let k = self.tree.node(l.block).row_sons();
        let cols = self.tree.node(m.block).col_sons;
        for i in 0..k {
            for j in 0..cols {
                self.solve_l(self.op(l.mat, l.block, i, i), self.op(m.mat, m.block, i, j), self.op(x.mat, x.block, i, j));
            }
            for r in i + 1..k {
                for j in 0..cols {
                    self.mul(self.op(l.mat, l.block, r, i), self.op(x.mat, x.block, i, j), self.op(m.mat, m.block, r, j));
                }
            }
        }
    }

    /// `X U = M` with `U` upper triangular.
    fn solve_u(&mut self, u: Operand, m: Operand, x: Operand) {
        if self.tree.is_leaf(m.block) {
            return self.push(TaskKind::LeafSolveU, &[u, m, x]);
        }
        let k = self.tree.node(u.block).row_sons();
        let rows = self.tree.node(m.block).row_sons();
        for i in 0..k {
            for r in 0..rows {
                self.solve_u(self.op(u.mat, u.block, i, i), self.op(m.mat, m.block, r, i), self.op(x.mat, x.block, r, i));
            }
            for c in i + 1..k {
                for r in 0..rows {
                    self.mul(self.op(x.mat, x.block, r, i), self.op(u.mat, u.block, i, c), self.op(m.mat, m.block, r, c));
                }
            }
        }
    }

    fn mul(&mut self, a: Operand, b: Operand, c: Operand) {
        if [a, b, c].iter().any(|o| self.tree.is_leaf(o.block)) {
            return self.push(TaskKind::LeafUpdate, &[a, b, c]);
        }
        let cn = self.tree.node(c.block);
        let inner = self.tree.node(a.block).col_sons;
        for i in 0..cn.row_sons() {
            for j in 0..cn.col_sons {
                for l in 0..inner {
                    self.mul(self.op(a.mat, a.block, i, l), self.op(b.mat, b.block, l, j), self.op(c.mat, c.block, i, j));
                }
            }
        }
    }
}

/// Leaf operations of the fully recursive H-LU of the root block.
pub fn lu_trace(tree: &BlockTree) -> Vec<TraceOp> {
    let mut t = Tracer { tree, out: Vec::new() };
    t.lu(tree.root());
    t.out
}

/// Pairs `(i, j)`, `i < j`, where operation `i` writes data that operation
/// `j` reads or writes, or reads data that `j` writes.
pub fn trace_hazards(tree: &BlockTree, trace: &[TraceOp]) -> Vec<(usize, usize)> {
    let rw: Vec<_> = trace.iter().map(|t| (t.reads(tree), t.writes(tree))).collect();
    let hit = |xs: &[Access], ys: &[Access]| xs.iter().any(|x| ys.iter().any(|y| overlap(x, y)));
    let mut out = Vec::new();
    for i in 0..trace.len() {
        for j in i + 1..trace.len() {
            let (ri, wi) = &rw[i];
            let (rj, wj) = &rw[j];
            if hit(wi, rj) || hit(wi, wj) || hit(ri, wj) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Position of each graph node in the trace; `None` if the node multisets
/// differ.
pub fn match_trace(g: &TaskGraph, trace: &[TraceOp]) -> Option<Vec<usize>> {
    if g.len() != trace.len() {
        return None;
    }
    let mut index: HashMap<&TraceOp, usize> = HashMap::new();
    for (i, t) in trace.iter().enumerate() {
        if index.insert(t, i).is_some() {
            return None;
        }
    }
    g.nodes()
        .iter()
        .map(|t| {
            let op = TraceOp { kind: t.kind, ops: t.ops[..t.num_ops()].to_vec() };
            index.get(&op).copied()
        })
        .collect()
}

/// Text form of a graph with nodes numbered in trace order.
pub fn canonical(tree: &BlockTree, trace: &[TraceOp], edges: &[(usize, usize)]) -> String {
    let mut s = String::new();
    for (i, t) in trace.iter().enumerate() {
        let _ = writeln!(s, "node {i} {}", t.describe(tree));
    }
    let mut e = edges.to_vec();
    e.sort_unstable();
    for (a, b) in e {
        let _ = writeln!(s, "edge {a} {b}");
    }
    s
}

/// Graph edges renumbered by trace position.
pub fn edges_in_trace_order(g: &TaskGraph, pos: &[usize]) -> Vec<(usize, usize)> {
    let mut e: Vec<_> = g.edges().map(|(a, b)| (pos[a as usize], pos[b as usize])).collect();
    e.sort_unstable();
    e
}

/// Compares `actual` with the file `tests/golden/<name>`; `UPDATE_GOLDEN=1`
/// rewrites the file from `expected` instead.
pub fn check_golden(name: &str, expected: &str, actual: &str) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, expected).unwrap();
    }
    let stored = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(stored, expected, "oracle output differs from {name}");
    assert_eq!(stored, actual, "task graph differs from {name}");
}

/// 1D problem with a chosen leaf size.
pub fn one_d(n: usize, leaf: usize) -> Problem {
    Problem::with_leaf_size(ProblemKind::OneD, n, 0.5, leaf).unwrap()
}

/// 1D clusters where only the two off-diagonal blocks below the root are
/// admissible, so they stay leaves while the diagonal is refined.
pub fn coarse_off_diagonal(n: usize, leaf: usize) -> Arc<BlockTree> {
    let pts: Vec<[f64; 1]> = (0..n).map(|i| [(i as f64 + 0.5) / n as f64]).collect();
    let ct = Arc::new(build_cluster_tree(&Geometry::from_points(&pts), leaf).unwrap());
    let root = ct.root();
    let top = ct.node(root).children.clone();
    let tree = build_block_tree(ct.clone(), ct, |_, t, _, s| Ok(t != s && top.contains(&t) && top.contains(&s)));
    Arc::new(tree.unwrap())
}
