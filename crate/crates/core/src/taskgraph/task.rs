//! Tasks, their data dependencies and their refinement into sub-tasks.

use smallvec::SmallVec;

use crate::trees::{BlockId, BlockTree, IndexSet};

/// Logical matrix a dependency refers to. Accumulators are distinct per block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MatrixId {
    A,
    L,
    U,
    Accu(BlockId),
}

/// Global matrix an operand lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mat {
    A,
    L,
    U,
}

impl Mat {
    pub fn id(self) -> MatrixId {
        match self {
            Mat::A => MatrixId::A,
            Mat::L => MatrixId::L,
            Mat::U => MatrixId::U,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Operand {
    pub mat: Mat,
    pub block: BlockId,
}

impl Operand {
    pub fn new(mat: Mat, block: BlockId) -> Self {
        Self { mat, block }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DataDep {
    pub id: MatrixId,
    pub rows: IndexSet,
    pub cols: IndexSet,
}

impl DataDep {
    pub fn new(id: MatrixId, rows: IndexSet, cols: IndexSet) -> Self {
        Self { id, rows, cols }
    }

    pub fn intersects(&self, other: &DataDep) -> bool {
        self.id == other.id && self.rows.intersects(&other.rows) && self.cols.intersects(&other.cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Hlu,
    Htrsl,
    Htrsu,
    Hmul,
    AddUpd,
    ShiftUpd,
    ApplyUpd,
    LeafFactor,
    LeafSolveL,
    LeafSolveU,
    LeafUpdate,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Hlu => "hlu",
            TaskKind::Htrsl => "htrsl",
            TaskKind::Htrsu => "htrsu",
            TaskKind::Hmul => "hmul",
            TaskKind::AddUpd => "add_upd",
            TaskKind::ShiftUpd => "shift_upd",
            TaskKind::ApplyUpd => "apply_upd",
            TaskKind::LeafFactor => "leaf_lu",
            TaskKind::LeafSolveL => "leaf_trsl",
            TaskKind::LeafSolveU => "leaf_trsu",
            TaskKind::LeafUpdate => "leaf_mul",
        }
    }

    /// DOT fill colour: factorizations red, solves blue, updates green,
    /// accumulator shift/apply yellow.
    pub fn color(self) -> &'static str {
        match self {
            TaskKind::Hlu | TaskKind::LeafFactor => "red",
            TaskKind::Htrsl | TaskKind::Htrsu | TaskKind::LeafSolveL | TaskKind::LeafSolveU => "lightblue",
            TaskKind::Hmul | TaskKind::AddUpd | TaskKind::LeafUpdate => "green",
            TaskKind::ShiftUpd | TaskKind::ApplyUpd => "yellow",
        }
    }
}

/// Which dependency table a task uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DepTable {
    /// Standard arithmetic, with the destination of updates as an extra input.
    Std,
    /// Accumulator arithmetic in one combined graph.
    Accu,
    /// Tasks of a merged accumulator graph. Updates read their factor
    /// operands and write their accumulator, so updates of one accumulator
    /// are mutually unordered; shift/apply tasks carry no data dependencies
    /// and are linked by explicit edges.
    Merged,
}

/// Graph construction mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Std,
    AccuCombined,
    AccuMerged,
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "std" => Ok(Mode::Std),
            "accu-combined" => Ok(Mode::AccuCombined),
            "accu-merged" => Ok(Mode::AccuMerged),
            _ => Err(crate::Error::InvalidParameter(format!(
                "unknown mode '{s}' (std, accu-combined, accu-merged)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Std => "std",
            Mode::AccuCombined => "accu-combined",
            Mode::AccuMerged => "accu-merged",
        })
    }
}

const DIGIT_BITS: u32 = 5;
const MAX_DEPTH: u32 = 128 / DIGIT_BITS;

/// Position of a task in the recursion: one digit (child index + 1) per
/// refinement level, left aligned. Ordering of sequences of tasks that are
/// not ancestors of each other is program order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Seq(pub u128);

impl Seq {
    pub fn root(digit: u8) -> Self {
        Seq(0).child(digit as usize - 1)
    }

    fn shift(level: u32) -> u32 {
        128 - DIGIT_BITS * (level + 1)
    }

    pub fn depth(self) -> u32 {
        (0..MAX_DEPTH)
            .find(|&l| (self.0 >> Self::shift(l)) & 0x1f == 0)
            .unwrap_or(MAX_DEPTH)
    }

    pub fn child(self, i: usize) -> Self {
        let d = self.depth();
        assert!(d < MAX_DEPTH && i < 31, "task recursion too deep");
        Seq(self.0 | ((i as u128 + 1) << Self::shift(d)))
    }

    pub fn digits(self) -> Vec<u8> {
        (0..self.depth()).map(|l| ((self.0 >> Self::shift(l)) & 0x1f) as u8).collect()
    }
}

impl std::fmt::Display for Seq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d: Vec<String> = self.digits().iter().map(|x| x.to_string()).collect();
        f.write_str(&d.join("."))
    }
}

pub type Deps = SmallVec<[DataDep; 4]>;

/// A call of an H-arithmetic function on specific blocks.
///
/// Operand layout by kind:
/// - `Hlu`, `LeafFactor`: `[A_tt]`
/// - `Htrsl`, `LeafSolveL`: `[L_tt, M_ts, X_ts]`
/// - `Htrsu`, `LeafSolveU`: `[U_tt, M_st, X_st]`
/// - `Hmul`, `LeafUpdate`, `AddUpd`: `[A_tr, B_rs, C_ts]` for `C += alpha A B`
/// - `ShiftUpd`, `ApplyUpd`: `[C]`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Task {
    pub kind: TaskKind,
    pub table: DepTable,
    pub alpha: f64,
    pub ops: [Operand; 3],
    pub seq: Seq,
}

impl Task {
    pub fn new(kind: TaskKind, table: DepTable, ops: &[Operand], seq: Seq) -> Self {
        let mut all = [ops[0]; 3];
        all[..ops.len()].copy_from_slice(ops);
        Self { kind, table, alpha: 1.0, ops: all, seq }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// The top-level `hlu(A, L, U)` call.
    pub fn root_lu(tree: &BlockTree, mode: Mode) -> Self {
        let root = tree.root();
        let op = [Operand::new(Mat::A, root)];
        match mode {
            Mode::AccuCombined => Task::new(TaskKind::Hlu, DepTable::Accu, &op, Seq::root(1)),
            _ => Task::new(lu_kind(tree, root), DepTable::Std, &op, Seq::root(1)),
        }
    }

    pub fn num_ops(&self) -> usize {
        match self.kind {
            TaskKind::Hlu | TaskKind::LeafFactor | TaskKind::ShiftUpd | TaskKind::ApplyUpd => 1,
            _ => 3,
        }
    }

    /// Block on which the task performs its main work: the factorized,
    /// solved, updated or shifted block.
    pub fn target(&self) -> Operand {
        match self.num_ops() {
            1 => self.ops[0],
            _ => match self.kind {
                TaskKind::Htrsl | TaskKind::Htrsu | TaskKind::LeafSolveL | TaskKind::LeafSolveU => self.ops[1],
                _ => self.ops[2],
            },
        }
    }

    pub fn is_leaf_kind(&self) -> bool {
        matches!(
            self.kind,
            TaskKind::LeafFactor | TaskKind::LeafSolveL | TaskKind::LeafSolveU | TaskKind::LeafUpdate
        )
    }

    fn dep(tree: &BlockTree, id: MatrixId, b: BlockId) -> DataDep {
        let n = tree.node(b);
        DataDep::new(id, n.rows, n.cols)
    }

    fn op_dep(&self, tree: &BlockTree, i: usize) -> DataDep {
        Self::dep(tree, self.ops[i].mat.id(), self.ops[i].block)
    }

    fn parent_accu(tree: &BlockTree, b: BlockId) -> Option<DataDep> {
        tree.node(b).parent.map(|p| Self::dep(tree, MatrixId::Accu(p), b))
    }

    pub fn in_deps(&self, tree: &BlockTree) -> Deps {
        let mut d = Deps::new();
        let b = self.target().block;
        match (self.kind, self.table) {
            (TaskKind::ShiftUpd | TaskKind::ApplyUpd, DepTable::Merged) => {}
            (TaskKind::ShiftUpd | TaskKind::ApplyUpd, _) => {
                d.extend(Self::parent_accu(tree, b));
                d.push(Self::dep(tree, MatrixId::Accu(b), b));
            }
            (TaskKind::Hlu | TaskKind::LeafFactor, table) => {
                d.push(self.op_dep(tree, 0));
                if table == DepTable::Accu {
                    d.extend(Self::parent_accu(tree, b));
                }
            }
            (TaskKind::Htrsl | TaskKind::Htrsu | TaskKind::LeafSolveL | TaskKind::LeafSolveU, table) => {
                d.push(self.op_dep(tree, 0));
                d.push(self.op_dep(tree, 1));
                if table == DepTable::Accu {
                    d.extend(Self::parent_accu(tree, b));
                }
            }
            (TaskKind::AddUpd, DepTable::Merged) => {
                d.push(self.op_dep(tree, 0));
                d.push(self.op_dep(tree, 1));
            }
            (TaskKind::AddUpd, _) => {
                d.push(self.op_dep(tree, 0));
                d.push(self.op_dep(tree, 1));
                d.push(self.op_dep(tree, 2));
                d.push(Self::dep(tree, MatrixId::Accu(b), b));
            }
            (TaskKind::Hmul | TaskKind::LeafUpdate, _) => {
                d.push(self.op_dep(tree, 0));
                d.push(self.op_dep(tree, 1));
                d.push(self.op_dep(tree, 2));
            }
        }
        d
    }

    pub fn out_deps(&self, tree: &BlockTree) -> Deps {
        let mut d = Deps::new();
        let b = self.target().block;
        match (self.kind, self.table) {
            (TaskKind::ShiftUpd | TaskKind::ApplyUpd, DepTable::Merged) => {}
            (TaskKind::ShiftUpd, _) => d.push(Self::dep(tree, MatrixId::Accu(b), b)),
            (TaskKind::ApplyUpd, _) => d.push(self.op_dep(tree, 0)),
            (TaskKind::Hlu | TaskKind::LeafFactor, _) => {
                d.push(Self::dep(tree, MatrixId::L, b));
                d.push(Self::dep(tree, MatrixId::U, b));
            }
            (TaskKind::Htrsl | TaskKind::Htrsu | TaskKind::LeafSolveL | TaskKind::LeafSolveU, _) => {
                d.push(self.op_dep(tree, 2))
            }
            (TaskKind::AddUpd, DepTable::Merged) => d.push(Self::dep(tree, MatrixId::Accu(b), b)),
            (TaskKind::AddUpd, _) => {
                d.push(self.op_dep(tree, 2));
                d.push(Self::dep(tree, MatrixId::Accu(b), b));
            }
            (TaskKind::Hmul | TaskKind::LeafUpdate, _) => d.push(self.op_dep(tree, 2)),
        }
        d
    }

    /// Label with kind and the ranges of the target block.
    pub fn label(&self, tree: &BlockTree) -> String {
        let n = tree.node(self.target().block);
        format!("{} {}x{}", self.kind.name(), n.rows, n.cols)
    }
}

/// Some output of `a` intersects some input of `b`.
pub fn precedes_deps(out_a: &[DataDep], in_b: &[DataDep]) -> bool {
    out_a.iter().any(|o| in_b.iter().any(|i| o.intersects(i)))
}

pub fn precedes(tree: &BlockTree, a: &Task, b: &Task) -> bool {
    precedes_deps(&a.out_deps(tree), &b.in_deps(tree))
}

fn lu_kind(tree: &BlockTree, b: BlockId) -> TaskKind {
    if tree.is_leaf(b) {
        TaskKind::LeafFactor
    } else {
        TaskKind::Hlu
    }
}

pub type Subs = SmallVec<[Task; 8]>;

/// Refinement rules for one construction mode.
#[derive(Clone, Copy, Debug)]
pub struct Refiner<'a> {
    pub tree: &'a BlockTree,
    pub mode: Mode,
    pub stop_size: usize,
}

impl<'a> Refiner<'a> {
    pub fn new(tree: &'a BlockTree, mode: Mode, stop_size: usize) -> Self {
        Self { tree, mode, stop_size }
    }

    pub fn block_refinable(&self, b: BlockId) -> bool {
        let n = self.tree.node(b);
        !n.is_leaf() && n.min_dim() > self.stop_size
    }

    fn all_refinable(&self, t: &Task) -> bool {
        t.ops.iter().all(|o| self.block_refinable(o.block))
    }

    pub fn is_refinable(&self, t: &Task) -> bool {
        match (t.kind, t.table) {
            (TaskKind::Hlu | TaskKind::Htrsl | TaskKind::Htrsu, DepTable::Accu) => true,
            (TaskKind::Hlu | TaskKind::Htrsl | TaskKind::Htrsu, _) => self.block_refinable(t.target().block),
            (TaskKind::Hmul, _) | (TaskKind::AddUpd, DepTable::Accu) => self.all_refinable(t),
            _ => false,
        }
    }

    fn child(&self, o: Operand, i: usize, j: usize) -> Operand {
        Operand::new(o.mat, self.tree.child(o.block, i, j))
    }

    fn table(&self) -> DepTable {
        if self.mode == Mode::AccuCombined {
            DepTable::Accu
        } else {
            DepTable::Std
        }
    }

    fn lu(&self, a: Operand, seq: Seq) -> Task {
        match self.mode {
            Mode::AccuCombined => Task::new(TaskKind::Hlu, DepTable::Accu, &[a], seq),
            _ => Task::new(lu_kind(self.tree, a.block), DepTable::Std, &[a], seq),
        }
    }

    fn solve(&self, lower: bool, ops: [Operand; 3], seq: Seq) -> Task {
        let (rec, leaf) = if lower {
            (TaskKind::Htrsl, TaskKind::LeafSolveL)
        } else {
            (TaskKind::Htrsu, TaskKind::LeafSolveU)
        };
        let kind = if self.mode != Mode::AccuCombined && self.tree.is_leaf(ops[1].block) {
            leaf
        } else {
            rec
        };
        Task::new(kind, self.table(), &ops, seq)
    }

    fn mul(&self, alpha: f64, ops: [Operand; 3], seq: Seq) -> Task {
        let any_leaf = ops.iter().any(|o| self.tree.is_leaf(o.block));
        let (kind, table) = match self.mode {
            Mode::Std if any_leaf => (TaskKind::LeafUpdate, DepTable::Std),
            Mode::Std => (TaskKind::Hmul, DepTable::Std),
            Mode::AccuCombined => (TaskKind::AddUpd, DepTable::Accu),
            Mode::AccuMerged => {
                if ops.iter().all(|o| self.block_refinable(o.block)) {
                    (TaskKind::Hmul, DepTable::Std)
                } else {
                    (TaskKind::AddUpd, DepTable::Merged)
                }
            }
        };
        Task::new(kind, table, &ops, seq).with_alpha(alpha)
    }

    /// Sub-tasks of a refinable task in program order, `None` otherwise.
    pub fn refine(&self, t: &Task) -> Option<Subs> {
        if !self.is_refinable(t) {
            return None;
        }
        let mut subs = Subs::new();
        let mut next = 0;
        let mut seq = || {
            next += 1;
            t.seq.child(next - 1)
        };
        let accu = t.table == DepTable::Accu;
        let target = t.target();
        if accu && matches!(t.kind, TaskKind::Hlu | TaskKind::Htrsl | TaskKind::Htrsu) {
            if !self.block_refinable(target.block) {
                // apply collected updates, then run the operation itself
                subs.push(Task::new(TaskKind::ApplyUpd, DepTable::Accu, &[target], seq()));
                let leaf = self.tree.is_leaf(target.block);
                let kind = match (t.kind, leaf) {
                    (TaskKind::Hlu, true) => TaskKind::LeafFactor,
                    (TaskKind::Htrsl, true) => TaskKind::LeafSolveL,
                    (TaskKind::Htrsu, true) => TaskKind::LeafSolveU,
                    (k, false) => k,
                    _ => unreachable!(),
                };
                let n = t.num_ops();
                subs.push(Task::new(kind, DepTable::Std, &t.ops[..n], seq()));
                return Some(subs);
            }
            subs.push(Task::new(TaskKind::ShiftUpd, DepTable::Accu, &[target], seq()));
        }
        match t.kind {
            TaskKind::Hlu => {
                let a = t.ops[0];
                let (l, u) = (Operand::new(Mat::L, a.block), Operand::new(Mat::U, a.block));
                let c = |o: Operand, i, j| self.child(o, i, j);
                subs.push(self.lu(c(a, 0, 0), seq()));
                subs.push(self.solve(false, [c(u, 0, 0), c(a, 1, 0), c(l, 1, 0)], seq()));
                subs.push(self.solve(true, [c(l, 0, 0), c(a, 0, 1), c(u, 0, 1)], seq()));
                subs.push(self.mul(-1.0, [c(l, 1, 0), c(u, 0, 1), c(a, 1, 1)], seq()));
                subs.push(self.lu(c(a, 1, 1), seq()));
            }
            TaskKind::Htrsl => {
                let [l, m, x] = t.ops;
                let c = |o: Operand, i, j| self.child(o, i, j);
                subs.push(self.solve(true, [c(l, 0, 0), c(m, 0, 0), c(x, 0, 0)], seq()));
                subs.push(self.solve(true, [c(l, 0, 0), c(m, 0, 1), c(x, 0, 1)], seq()));
                subs.push(self.mul(-1.0, [c(l, 1, 0), c(x, 0, 0), c(m, 1, 0)], seq()));
                subs.push(self.mul(-1.0, [c(l, 1, 0), c(x, 0, 1), c(m, 1, 1)], seq()));
                subs.push(self.solve(true, [c(l, 1, 1), c(m, 1, 0), c(x, 1, 0)], seq()));
                subs.push(self.solve(true, [c(l, 1, 1), c(m, 1, 1), c(x, 1, 1)], seq()));
            }
            TaskKind::Htrsu => {
                let [u, m, x] = t.ops;
                let c = |o: Operand, i, j| self.child(o, i, j);
                subs.push(self.solve(false, [c(u, 0, 0), c(m, 0, 0), c(x, 0, 0)], seq()));
                subs.push(self.solve(false, [c(u, 0, 0), c(m, 1, 0), c(x, 1, 0)], seq()));
                subs.push(self.mul(-1.0, [c(x, 0, 0), c(u, 0, 1), c(m, 0, 1)], seq()));
                subs.push(self.mul(-1.0, [c(x, 1, 0), c(u, 0, 1), c(m, 1, 1)], seq()));
                subs.push(self.solve(false, [c(u, 1, 1), c(m, 0, 1), c(x, 0, 1)], seq()));
                subs.push(self.solve(false, [c(u, 1, 1), c(m, 1, 1), c(x, 1, 1)], seq()));
            }
            TaskKind::Hmul | TaskKind::AddUpd => {
                let [a, b, c] = t.ops;
                let cn = self.tree.node(c.block);
                let inner = self.tree.node(a.block).col_sons;
                for i in 0..cn.row_sons() {
                    for j in 0..cn.col_sons {
                        for l in 0..inner {
                            let ops = [self.child(a, i, l), self.child(b, l, j), self.child(c, i, j)];
                            let sub = if t.kind == TaskKind::AddUpd {
                                Task::new(TaskKind::AddUpd, DepTable::Accu, &ops, seq()).with_alpha(t.alpha)
                            } else {
                                self.mul(t.alpha, ops, seq())
                            };
                            subs.push(sub);
                        }
                    }
                }
            }
            _ => unreachable!("kind {:?} is never refined", t.kind),
        }
        Some(subs)
    }
}

/// Local edges among sub-tasks: `i -> j` for `i < j` whenever either
/// precedes the other.
pub fn local_edges(tree: &BlockTree, subs: &[Task]) -> SmallVec<[(u8, u8); 16]> {
    let ins: SmallVec<[Deps; 8]> = subs.iter().map(|t| t.in_deps(tree)).collect();
    let outs: SmallVec<[Deps; 8]> = subs.iter().map(|t| t.out_deps(tree)).collect();
    let mut e = SmallVec::new();
    for j in 0..subs.len() {
        for i in 0..j {
            if precedes_deps(&outs[i], &ins[j]) || precedes_deps(&outs[j], &ins[i]) {
                e.push((i as u8, j as u8));
            }
        }
    }
    e
}
