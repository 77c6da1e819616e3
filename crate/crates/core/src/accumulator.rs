//! Accumulator based H-arithmetic.
//!
//! Updates to a block are first collected in its accumulator: evaluable
//! products are summed in the update matrix `U`, products of three blocked
//! matrices are kept as pending triples. Shifting moves both parts one level
//! down the block tree, applying adds `U` into the leaf.
//!
//! Summation into `U` never truncates. A low-rank `U` is truncated once when
//! it is shifted after more than one contribution, and the destination leaf
//! once when `U` is applied; low-rank `U` turns dense once its rank reaches
//! the block size or a dense contribution arrives.
//!
//! Each accumulator sits behind a mutex: a parent shift and an update
//! collected directly into one of its sons are not ordered by the task graph
//! dependencies, nor are two updates of one accumulator in a merged graph.
//! All of them only add into the accumulator.

use std::sync::Arc;

use nalgebra::DMatrix;
use parking_lot::{Mutex, MutexGuard};

use crate::arith::{leaf_lu, leaf_solve_lower, leaf_solve_upper};
use crate::error::{Error, Result};
use crate::hmatrix::{leaf_add, product, truncate, Ctx, HRef, HMatrix, Leaf, LowRank};
use crate::trees::{BlockId, BlockTree};

/// Deferred product `alpha * A * B` of three blocked matrices.
#[derive(Clone, Copy, Debug)]
pub struct Pending<'a> {
    pub alpha: f64,
    pub a: HRef<'a>,
    pub b: HRef<'a>,
}

#[derive(Debug, Default)]
pub struct Accumulator<'a> {
    /// Collected update matrix; `None` is rank zero.
    pub u: Option<Leaf>,
    contributions: usize,
    pub pending: Vec<Pending<'a>>,
}

impl<'a> Accumulator<'a> {
    pub fn is_empty(&self) -> bool {
        self.u.is_none() && self.pending.is_empty()
    }

    fn fold(&mut self, upd: Leaf) {
        if matches!(&upd, Leaf::LowRank(r) if r.rank() == 0) {
            return;
        }
        self.contributions += 1;
        let merged = match (self.u.take(), upd) {
            (None, upd) => upd,
            (Some(Leaf::Dense(mut d)), upd) => {
                add_dense(&mut d, &upd);
                Leaf::Dense(d)
            }
            (Some(Leaf::LowRank(c)), Leaf::Dense(mut d)) => {
                add_dense(&mut d, &Leaf::LowRank(c));
                Leaf::Dense(d)
            }
            (Some(Leaf::LowRank(c)), Leaf::LowRank(r)) => {
                let k = c.rank() + r.rank();
                if k >= c.rows().min(c.cols()) {
                    Leaf::Dense(c.to_dense() + r.to_dense())
                } else {
                    let mut u = DMatrix::zeros(c.rows(), k);
                    let mut v = DMatrix::zeros(c.cols(), k);
                    u.columns_mut(0, c.rank()).copy_from(&c.u);
                    u.columns_mut(c.rank(), r.rank()).copy_from(&r.u);
                    v.columns_mut(0, c.rank()).copy_from(&c.v);
                    v.columns_mut(c.rank(), r.rank()).copy_from(&r.v);
                    Leaf::LowRank(LowRank { u, v })
                }
            }
        };
        self.u = Some(merged);
    }

    fn take(&mut self) -> (Option<Leaf>, usize, Vec<Pending<'a>>) {
        let c = std::mem::take(&mut self.contributions);
        (self.u.take(), c, std::mem::take(&mut self.pending))
    }
}

fn add_dense(d: &mut DMatrix<f64>, upd: &Leaf) {
    match upd {
        Leaf::Dense(x) => *d += x,
        Leaf::LowRank(r) if r.rank() > 0 => d.gemm(1.0, &r.u, &r.v.transpose(), 1.0),
        Leaf::LowRank(_) => {}
    }
}

/// One accumulator per block of the destination matrix.
#[derive(Debug)]
pub struct AccumulatorMap<'a> {
    tree: Arc<BlockTree>,
    accs: Vec<Mutex<Accumulator<'a>>>,
}

impl<'a> AccumulatorMap<'a> {
    pub fn new(tree: Arc<BlockTree>) -> Self {
        let accs = (0..tree.len()).map(|_| Mutex::new(Accumulator::default())).collect();
        Self { tree, accs }
    }

    pub fn tree(&self) -> &Arc<BlockTree> {
        &self.tree
    }

    pub fn get(&self, b: BlockId) -> MutexGuard<'_, Accumulator<'a>> {
        self.accs[b.index()].lock()
    }

    /// True if no accumulator holds updates.
    pub fn is_empty(&self) -> bool {
        self.accs.iter().all(|a| a.lock().is_empty())
    }
}

/// Collects `alpha * A * B` for the block `C`.
pub fn add_upd<'a>(
    alpha: f64,
    a: HRef<'a>,
    b: HRef<'a>,
    c: HRef<'_>,
    accs: &AccumulatorMap<'a>,
) -> Result<()> {
    if a.rows() != c.rows() || a.cols() != b.rows() || b.cols() != c.cols() {
        return Err(Error::NonConformal("add_upd operands".into()));
    }
    if alpha == 0.0 {
        return Ok(());
    }
    if !a.is_leaf() && !b.is_leaf() && !c.is_leaf() {
        accs.get(c.block).pending.push(Pending { alpha, a, b });
        return Ok(());
    }
    if let Some(upd) = product(alpha, a, b) {
        accs.get(c.block).fold(upd);
    }
    Ok(())
}

/// Moves the collected updates of a blocked `C` to its sons.
pub fn shift_upd<'a>(c: HRef<'_>, accs: &AccumulatorMap<'a>, ctx: &Ctx) -> Result<()> {
    let node = c.node();
    if node.is_leaf() {
        return Err(Error::LeafBlock(c.block.index()));
    }
    let (mut u, contributions, pending) = accs.get(c.block).take();
    if contributions > 1 {
        if let Some(Leaf::LowRank(r)) = &u {
            ctx.counters.count_truncation();
            u = Some(Leaf::LowRank(truncate(&r.u, &r.v, ctx.policy)?));
        }
    }
    for i in 0..node.row_sons() {
        for j in 0..node.col_sons {
            let son = c.child(i, j);
            if let Some(u) = &u {
                let sn = son.node();
                let part = u.restrict(sn.rows.local_in(&node.rows), sn.cols.local_in(&node.cols));
                accs.get(son.block).fold(part);
            }
            for p in &pending {
                for r in 0..p.a.node().col_sons {
                    add_upd(p.alpha, p.a.child(i, r), p.b.child(r, j), son, accs)?;
                }
            }
        }
    }
    Ok(())
}

/// Applies all collected updates of `C` and its descendants to the leaves.
pub fn apply_upd(c: HRef<'_>, accs: &AccumulatorMap<'_>, ctx: &Ctx) -> Result<()> {
    let node = c.node();
    if !node.is_leaf() {
        shift_upd(c, accs, ctx)?;
        for &son in &node.children {
            apply_upd(HRef::new(c.mat, son), accs, ctx)?;
        }
        return Ok(());
    }
    let (u, _, pending) = accs.get(c.block).take();
    debug_assert!(pending.is_empty(), "pending products on a leaf");
    if let Some(u) = u {
        leaf_add(&mut c.mat.leaf_mut(c.block), u, node.admissible, ctx);
    }
    Ok(())
}

/// H-LU with accumulators.
pub fn hlu_accu<'a>(
    a: &'a HMatrix,
    l: &'a HMatrix,
    u: &'a HMatrix,
    b: BlockId,
    accs: &AccumulatorMap<'a>,
    ctx: &Ctx,
) -> Result<()> {
    let node = a.block(b);
    if node.rows != node.cols {
        return Err(Error::NonConformal("hlu needs a diagonal block".into()));
    }
    if node.is_leaf() {
        apply_upd(HRef::new(a, b), accs, ctx)?;
        return leaf_lu(a, l, u, b);
    }
    shift_upd(HRef::new(a, b), accs, ctx)?;
    let blk = |i, j| a.tree().child(b, i, j);
    hlu_accu(a, l, u, blk(0, 0), accs, ctx)?;
    htrsu_accu(HRef::new(u, blk(0, 0)), HRef::new(a, blk(1, 0)), HRef::new(l, blk(1, 0)), accs, ctx)?;
    htrsl_accu(HRef::new(l, blk(0, 0)), HRef::new(a, blk(0, 1)), HRef::new(u, blk(0, 1)), accs, ctx)?;
    // The published listing names the diagonal factors L_{t1,t1}, U_{t1,t1}
    // here; the update of the Schur complement needs L_{t1,t0} * U_{t0,t1}.
    add_upd(-1.0, HRef::new(l, blk(1, 0)), HRef::new(u, blk(0, 1)), HRef::new(a, blk(1, 1)), accs)?;
    hlu_accu(a, l, u, blk(1, 1), accs, ctx)
}

/// Lower triangular solve `L * X = M` with accumulators.
pub fn htrsl_accu<'a>(
    l: HRef<'a>,
    m: HRef<'a>,
    x: HRef<'a>,
    accs: &AccumulatorMap<'a>,
    ctx: &Ctx,
) -> Result<()> {
    if m.is_leaf() {
        apply_upd(m, accs, ctx)?;
        return leaf_solve_lower(l, m, x);
    }
    shift_upd(m, accs, ctx)?;
    htrsl_accu(l.child(0, 0), m.child(0, 0), x.child(0, 0), accs, ctx)?;
    htrsl_accu(l.child(0, 0), m.child(0, 1), x.child(0, 1), accs, ctx)?;
    add_upd(-1.0, l.child(1, 0), x.child(0, 0), m.child(1, 0), accs)?;
    // the listing writes L_{t1,s0} for the second update; L_{t1,t0} is meant
    add_upd(-1.0, l.child(1, 0), x.child(0, 1), m.child(1, 1), accs)?;
    htrsl_accu(l.child(1, 1), m.child(1, 0), x.child(1, 0), accs, ctx)?;
    htrsl_accu(l.child(1, 1), m.child(1, 1), x.child(1, 1), accs, ctx)
}

/// Upper triangular solve `X * U = M` with accumulators.
pub fn htrsu_accu<'a>(
    u: HRef<'a>,
    m: HRef<'a>,
    x: HRef<'a>,
    accs: &AccumulatorMap<'a>,
    ctx: &Ctx,
) -> Result<()> {
    if m.is_leaf() {
        apply_upd(m, accs, ctx)?;
        return leaf_solve_upper(u, m, x);
    }
    shift_upd(m, accs, ctx)?;
    htrsu_accu(u.child(0, 0), m.child(0, 0), x.child(0, 0), accs, ctx)?;
    htrsu_accu(u.child(0, 0), m.child(1, 0), x.child(1, 0), accs, ctx)?;
    add_upd(-1.0, x.child(0, 0), u.child(0, 1), m.child(0, 1), accs)?;
    add_upd(-1.0, x.child(1, 0), u.child(0, 1), m.child(1, 1), accs)?;
    htrsu_accu(u.child(1, 1), m.child(0, 1), x.child(0, 1), accs, ctx)?;
    htrsu_accu(u.child(1, 1), m.child(1, 1), x.child(1, 1), accs, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::{hlu, hmul};
    use crate::hmatrix::{rel_error, TruncationPolicy};
    use crate::trees::{build_block_tree, build_cluster_tree, standard_admissible, Geometry};

    fn tree_1d(n: usize) -> Arc<BlockTree> {
        let pts: Vec<[f64; 1]> = (0..n).map(|i| [(i as f64 + 0.5) / n as f64]).collect();
        let ct = Arc::new(build_cluster_tree(&Geometry::from_points(&pts), 16).unwrap());
        Arc::new(build_block_tree(ct.clone(), ct, |r, t, c, s| standard_admissible(r, t, c, s, 1.0)).unwrap())
    }

    fn shifted_log(n: usize) -> impl Fn(usize, usize) -> f64 {
        move |i, j| {
            let h = 1.0 / n as f64;
            if i == j {
                ((h / 2.0).ln() - 1.0) * h + 0.5
            } else {
                ((i as f64 - j as f64).abs() * h).ln() * h
            }
        }
    }

    #[test]
    fn blocked_product_goes_to_pending() {
        let tree = tree_1d(128);
        let a = HMatrix::assemble(tree.clone(), &shifted_log(128), TruncationPolicy::Exact);
        let accs = AccumulatorMap::new(tree.clone());
        let r = HRef::new(&a, tree.root());
        add_upd(1.0, r, r, r, &accs).unwrap();
        assert_eq!(accs.get(tree.root()).pending.len(), 1);
        assert!(accs.get(tree.root()).u.is_none());
    }

    #[test]
    fn zero_alpha_leaf_update_is_dropped() {
        let tree = tree_1d(8);
        let a = HMatrix::assemble(tree.clone(), &shifted_log(8), TruncationPolicy::Exact);
        let accs = AccumulatorMap::new(tree.clone());
        let r = HRef::new(&a, tree.root());
        add_upd(0.0, r, r, r, &accs).unwrap();
        assert!(accs.is_empty());
    }

    #[test]
    fn two_rank_one_updates_sum_exactly() {
        let tree = tree_1d(8);
        let z = HMatrix::zeros(tree.clone(), TruncationPolicy::Exact);
        let x = HMatrix::zeros(tree.clone(), TruncationPolicy::Exact);
        let root = tree.root();
        let u1 = DMatrix::from_fn(8, 1, |i, _| i as f64);
        let u2 = DMatrix::from_fn(8, 1, |i, _| 1.0 / (1.0 + i as f64));
        let x2 = x.clone();
        let id = HMatrix::zeros(tree.clone(), TruncationPolicy::Exact);
        id.set_leaf(root, Some(Leaf::Dense(DMatrix::identity(8, 8)))).unwrap();
        let accs = AccumulatorMap::new(tree.clone());
        for (x, u) in [(&x, &u1), (&x2, &u2)] {
            x.set_leaf(root, Some(Leaf::LowRank(LowRank::new(u.clone(), u.clone()).unwrap()))).unwrap();
            add_upd(1.0, HRef::new(x, root), HRef::new(&id, root), HRef::new(&z, root), &accs).unwrap();
        }
        let got = accs.get(root).u.as_ref().unwrap().to_dense();
        let want = &u1 * u1.transpose() + &u2 * u2.transpose();
        assert!(rel_error(&want, &got) < 1e-13);
    }

    #[test]
    fn shift_on_leaf_is_an_error() {
        let tree = tree_1d(8);
        let a = HMatrix::zeros(tree.clone(), TruncationPolicy::Exact);
        let accs = AccumulatorMap::new(tree.clone());
        let ctx = Ctx::new(TruncationPolicy::Exact);
        assert_eq!(shift_upd(HRef::new(&a, tree.root()), &accs, &ctx), Err(Error::LeafBlock(0)));
    }

    #[test]
    fn add_then_apply_equals_hmul() {
        let tree = tree_1d(256);
        let k = shifted_log(256);
        let a = HMatrix::assemble(tree.clone(), &k, TruncationPolicy::Exact);
        let c1 = a.clone();
        let c2 = a.clone();
        let ctx = Ctx::new(TruncationPolicy::Exact);
        let r = tree.root();
        hmul(1.0, HRef::new(&a, r), HRef::new(&a, r), HRef::new(&c1, r), &ctx).unwrap();
        let accs = AccumulatorMap::new(tree.clone());
        add_upd(1.0, HRef::new(&a, r), HRef::new(&a, r), HRef::new(&c2, r), &accs).unwrap();
        apply_upd(HRef::new(&c2, r), &accs, &ctx).unwrap();
        assert!(accs.is_empty());
        let once = c2.to_dense();
        assert!(rel_error(&c1.to_dense(), &once) < 1e-12);
        apply_upd(HRef::new(&c2, r), &accs, &ctx).unwrap();
        assert_eq!(once, c2.to_dense());
    }

    #[test]
    fn hlu_accu_matches_hlu() {
        let n = 512;
        let tree = tree_1d(n);
        let k = shifted_log(n);
        let ctx = Ctx::new(TruncationPolicy::Exact);
        let a1 = HMatrix::assemble(tree.clone(), &k, TruncationPolicy::Exact);
        let a2 = a1.clone();
        let (l1, u1) = (HMatrix::zeros(tree.clone(), ctx.policy), HMatrix::zeros(tree.clone(), ctx.policy));
        let (l2, u2) = (l1.clone(), u1.clone());
        hlu(&a1, &l1, &u1, tree.root(), &ctx).unwrap();
        let accs = AccumulatorMap::new(tree.clone());
        hlu_accu(&a2, &l2, &u2, tree.root(), &accs, &ctx).unwrap();
        assert!(rel_error(&l1.to_dense(), &l2.to_dense()) < 1e-11);
        assert!(rel_error(&u1.to_dense(), &u2.to_dense()) < 1e-11);
    }
}
