//! H-matrix storage, low-rank truncation and the leaf kernels.
//!
//! An [`HMatrix`] owns one slot per block of its block tree; only leaf slots
//! are ever populated. An empty slot is a zero block. Dense storage is
//! column-major (nalgebra).

use std::fmt::Write as _;
use std::ops::Range;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use parking_lot::{RwLock, RwLockReadGuard, RwLockWriteGuard};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::trees::{Block, BlockId, BlockTree, IndexSet};

/// Relative singular value cutoff below which a value counts as zero.
pub const ZERO_CUTOFF: f64 = 1e-14;

/// Blocks up to this size are compressed by a direct SVD.
const DIRECT_SVD_SIZE: usize = 96;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TruncationPolicy {
    /// Keeps every singular value above `ZERO_CUTOFF * sigma_1`.
    Exact,
    /// Drops singular values `sigma_i <= eps * sigma_1`.
    FixedAccuracy(f64),
    /// Keeps the `k` largest singular values.
    FixedRank(usize),
}

impl TruncationPolicy {
    /// Number of singular values to keep from a descending sequence.
    pub fn keep(&self, sv: &[f64]) -> usize {
        let Some(&s1) = sv.first() else { return 0 };
        if s1 <= 0.0 {
            return 0;
        }
        let above = |tol: f64| sv.iter().take_while(|&&s| s > tol * s1).count();
        match *self {
            TruncationPolicy::Exact => above(ZERO_CUTOFF),
            TruncationPolicy::FixedAccuracy(eps) => above(eps.max(ZERO_CUTOFF)),
            TruncationPolicy::FixedRank(k) => above(ZERO_CUTOFF).min(k),
        }
    }

    fn range_tolerance(&self) -> Option<f64> {
        match *self {
            TruncationPolicy::Exact => Some(ZERO_CUTOFF),
            TruncationPolicy::FixedAccuracy(eps) => Some(eps.max(ZERO_CUTOFF)),
            TruncationPolicy::FixedRank(_) => None,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            TruncationPolicy::FixedAccuracy(eps) => Some(eps),
            _ => None,
        }
    }
}

impl FromStr for TruncationPolicy {
    type Err = Error;

    /// Parses `exact`, `eps=<v>` or `rank=<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("truncation policy '{s}'"));
        if s == "exact" {
            return Ok(TruncationPolicy::Exact);
        }
        if let Some(v) = s.strip_prefix("eps=") {
            let eps: f64 = v.parse().map_err(|_| bad())?;
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(bad());
            }
            return Ok(TruncationPolicy::FixedAccuracy(eps));
        }
        if let Some(v) = s.strip_prefix("rank=") {
            return Ok(TruncationPolicy::FixedRank(v.parse().map_err(|_| bad())?));
        }
        Err(bad())
    }
}

impl std::fmt::Display for TruncationPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TruncationPolicy::Exact => write!(f, "exact"),
            TruncationPolicy::FixedAccuracy(e) => write!(f, "eps={e:e}"),
            TruncationPolicy::FixedRank(k) => write!(f, "rank={k}"),
        }
    }
}

/// Factorized block `U * V^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRank {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LowRank {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "low-rank factors with {} and {} columns",
                u.ncols(),
                v.ncols()
            )));
        }
        Ok(Self { u, v })
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            u: DMatrix::zeros(rows, 0),
            v: DMatrix::zeros(cols, 0),
        }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }

    pub fn frobenius(&self) -> f64 {
        if self.rank() == 0 {
            return 0.0;
        }
        let gu = self.u.tr_mul(&self.u);
        let gv = self.v.tr_mul(&self.v);
        gu.component_mul(&gv).sum().max(0.0).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Leaf {
    Dense(DMatrix<f64>),
    LowRank(LowRank),
}

impl Leaf {
    pub fn rows(&self) -> usize {
        match self {
            Leaf::Dense(d) => d.nrows(),
            Leaf::LowRank(r) => r.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Leaf::Dense(d) => d.ncols(),
            Leaf::LowRank(r) => r.cols(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Leaf::Dense(_))
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            Leaf::Dense(_) => None,
            Leaf::LowRank(r) => Some(r.rank()),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Leaf::Dense(d) => d.clone(),
            Leaf::LowRank(r) => r.to_dense(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        match self {
            Leaf::Dense(d) => d.norm(),
            Leaf::LowRank(r) => r.frobenius(),
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        match self {
            Leaf::Dense(d) => *d *= alpha,
            Leaf::LowRank(r) => r.u *= alpha,
        }
    }

    /// Sub-block with the given local row and column ranges. Low-rank
    /// restriction slices the factors and keeps the rank.
    pub fn restrict(&self, rows: Range<usize>, cols: Range<usize>) -> Leaf {
        match self {
            Leaf::Dense(d) => Leaf::Dense(
                d.view((rows.start, cols.start), (rows.len(), cols.len()))
                    .into_owned(),
            ),
            Leaf::LowRank(r) => Leaf::LowRank(LowRank {
                u: r.u.rows(rows.start, rows.len()).into_owned(),
                v: r.v.rows(cols.start, cols.len()).into_owned(),
            }),
        }
    }

    fn is_zero_rank(&self) -> bool {
        matches!(self, Leaf::LowRank(r) if r.rank() == 0)
    }

    fn add_to(&self, target: &mut DMatrix<f64>) {
        match self {
            Leaf::Dense(d) => *target += d,
            Leaf::LowRank(r) => {
                if r.rank() > 0 {
                    target.gemm(1.0, &r.u, &r.v.transpose(), 1.0);
                }
            }
        }
    }
}

/// Operation counters shared by all arithmetic on one factorization.
#[derive(Debug, Default)]
pub struct Counters {
    truncations: AtomicUsize,
    updates: AtomicUsize,
}

impl Counters {
    pub fn truncations(&self) -> usize {
        self.truncations.load(Ordering::Relaxed)
    }

    pub fn updates(&self) -> usize {
        self.updates.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.truncations.store(0, Ordering::Relaxed);
        self.updates.store(0, Ordering::Relaxed);
    }

    pub(crate) fn count_truncation(&self) {
        self.truncations.fetch_add(1, Ordering::Relaxed);
    }

    fn count_update(&self) {
        self.updates.fetch_add(1, Ordering::Relaxed);
    }
}

/// Truncation policy plus counters, passed to every arithmetic routine.
#[derive(Debug)]
pub struct Ctx {
    pub policy: TruncationPolicy,
    pub counters: Counters,
}

impl Ctx {
    pub fn new(policy: TruncationPolicy) -> Self {
        Self {
            policy,
            counters: Counters::default(),
        }
    }

    pub fn truncations(&self) -> usize {
        self.counters.truncations()
    }
}

/// Best low-rank approximation of `u * v^T` under `policy` via QR of both
/// factors and an SVD of the small core.
pub fn truncate(u: &DMatrix<f64>, v: &DMatrix<f64>, policy: TruncationPolicy) -> Result<LowRank> {
    if u.ncols() != v.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "factors with {} and {} columns",
            u.ncols(),
            v.ncols()
        )));
    }
    let (m, n, k) = (u.nrows(), v.nrows(), u.ncols());
    if k == 0 || m == 0 || n == 0 {
        return Ok(LowRank::zero(m, n));
    }
    if k >= m.min(n) {
        return Ok(compress(&(u * v.transpose()), policy));
    }
    let qu = u.clone().qr();
    let qv = v.clone().qr();
    let core = qu.r() * qv.r().transpose();
    let svd = core.svd(true, true);
    let keep = policy.keep(svd.singular_values.as_slice());
    let (w, zt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut left = w.columns(0, keep).into_owned();
    scale_columns(&mut left, &svd.singular_values);
    Ok(LowRank {
        u: qu.q() * left,
        v: qv.q() * zt.rows(0, keep).transpose(),
    })
}

/// Low-rank approximation of a dense block under `policy`.
///
/// Small blocks use a direct SVD. Larger blocks first find an orthonormal
/// basis of the range with a seeded randomized sketch (one power iteration),
/// doubling the sketch until the residual is below the policy tolerance, and
/// then take the SVD of the projected block.
pub fn compress(m: &DMatrix<f64>, policy: TruncationPolicy) -> LowRank {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 || m.iter().all(|&x| x == 0.0) {
        return LowRank::zero(rows, cols);
    }
    let small = rows.min(cols);
    let mut width = match policy {
        TruncationPolicy::FixedRank(k) => k + 10,
        _ => 24,
    };
    while small > DIRECT_SVD_SIZE && 2 * width < small {
        let mut rng = StdRng::seed_from_u64(0x5eed ^ ((rows as u64) << 32) ^ (cols as u64) ^ ((width as u64) << 48));
        let omega = DMatrix::from_fn(cols, width, |_, _| rng.random_range(-1.0..1.0));
        let q = orthonormal(m * omega);
        let q = orthonormal(m * orthonormal(m.tr_mul(&q)));
        let b = q.tr_mul(m);
        let svd = b.clone().svd(true, true);
        let s1 = svd.singular_values[0];
        let accepted = match policy.range_tolerance() {
            None => true,
            Some(tol) => (m - &q * &b).norm() <= tol * s1,
        };
        if accepted {
            let keep = policy.keep(svd.singular_values.as_slice());
            let mut left = svd.u.unwrap().columns(0, keep).into_owned();
            scale_columns(&mut left, &svd.singular_values);
            return LowRank {
                u: q * left,
                v: svd.v_t.unwrap().rows(0, keep).transpose(),
            };
        }
        width *= 2;
    }
    let svd = m.clone().svd(true, true);
    let keep = policy.keep(svd.singular_values.as_slice());
    let mut left = svd.u.unwrap().columns(0, keep).into_owned();
    scale_columns(&mut left, &svd.singular_values);
    LowRank {
        u: left,
        v: svd.v_t.unwrap().rows(0, keep).transpose(),
    }
}

fn orthonormal(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

fn scale_columns(m: &mut DMatrix<f64>, s: &DVector<f64>) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= s[j];
    }
}

/// Adds `upd` (already scaled) into a leaf slot. Low-rank destinations are
/// truncated once per call.
pub(crate) fn leaf_add(slot: &mut Option<Leaf>, upd: Leaf, admissible: bool, ctx: &Ctx) {
    if upd.is_zero_rank() {
        return;
    }
    ctx.counters.count_update();
    match slot {
        None => {
            *slot = Some(match upd {
                Leaf::Dense(d) if admissible => {
                    ctx.counters.count_truncation();
                    Leaf::LowRank(compress(&d, ctx.policy))
                }
                other => other,
            });
        }
        Some(Leaf::Dense(c)) => upd.add_to(c),
        Some(Leaf::LowRank(c)) => {
            ctx.counters.count_truncation();
            let sum = match upd {
                Leaf::LowRank(r) => {
                    let k = c.rank() + r.rank();
                    if k >= c.rows().min(c.cols()) {
                        compress(&(c.to_dense() + r.to_dense()), ctx.policy)
                    } else {
                        let mut u = DMatrix::zeros(c.rows(), k);
                        let mut v = DMatrix::zeros(c.cols(), k);
                        u.columns_mut(0, c.rank()).copy_from(&c.u);
                        u.columns_mut(c.rank(), r.rank()).copy_from(&r.u);
                        v.columns_mut(0, c.rank()).copy_from(&c.v);
                        v.columns_mut(c.rank(), r.rank()).copy_from(&r.v);
                        truncate(&u, &v, ctx.policy).expect("conformal widened factors")
                    }
                }
                Leaf::Dense(d) => compress(&(d + c.to_dense()), ctx.policy),
            };
            *c = sum;
        }
    }
}

fn check_leaf_dims(what: &str, leaf: &Leaf, rows: usize, cols: usize) -> Result<()> {
    if leaf.rows() != rows || leaf.cols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            leaf.rows(),
            leaf.cols()
        )));
    }
    Ok(())
}

/// Product of two leaves; low-rank if either factor is low-rank.
pub fn leaf_product(alpha: f64, a: &Leaf, b: &Leaf) -> Result<Leaf> {
    if a.cols() != b.rows() {
        return Err(Error::DimensionMismatch(format!(
            "product of {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(match (a, b) {
        (Leaf::Dense(x), Leaf::Dense(y)) => Leaf::Dense(alpha * x * y),
        (Leaf::LowRank(x), Leaf::Dense(y)) => Leaf::LowRank(LowRank {
            u: alpha * &x.u,
            v: y.tr_mul(&x.v),
        }),
        (Leaf::Dense(x), Leaf::LowRank(y)) => Leaf::LowRank(LowRank {
            u: alpha * x * &y.u,
            v: y.v.clone(),
        }),
        (Leaf::LowRank(x), Leaf::LowRank(y)) => {
            let core = x.v.tr_mul(&y.u);
            if x.rank() <= y.rank() {
                Leaf::LowRank(LowRank {
                    u: alpha * &x.u,
                    v: &y.v * core.transpose(),
                })
            } else {
                Leaf::LowRank(LowRank {
                    u: alpha * &x.u * core,
                    v: y.v.clone(),
                })
            }
        }
    })
}

/// `C := C + alpha * A * B` on leaves. Dense `C` is updated exactly and
/// low-rank `C` is replaced by the truncated widened factor pair.
pub fn leaf_update(c: &mut Leaf, alpha: f64, a: &Leaf, b: &Leaf, ctx: &Ctx) -> Result<()> {
    check_leaf_dims("destination", c, a.rows(), b.cols())?;
    if alpha == 0.0 {
        return Ok(());
    }
    let upd = leaf_product(alpha, a, b)?;
    let admissible = !c.is_dense();
    let mut slot = Some(std::mem::replace(c, Leaf::Dense(DMatrix::zeros(0, 0))));
    leaf_add(&mut slot, upd, admissible, ctx);
    *c = slot.expect("slot stays populated");
    Ok(())
}

/// Entry function over original (unpermuted) indices.
pub trait Kernel: Send + Sync {
    fn eval(&self, i: usize, j: usize) -> f64;
}

impl<F: Fn(usize, usize) -> f64 + Send + Sync> Kernel for F {
    fn eval(&self, i: usize, j: usize) -> f64 {
        self(i, j)
    }
}

/// Hierarchical matrix over a block tree.
#[derive(Debug)]
pub struct HMatrix {
    tree: Arc<BlockTree>,
    leaves: Vec<RwLock<Option<Leaf>>>,
    policy: TruncationPolicy,
}

impl Clone for HMatrix {
    fn clone(&self) -> Self {
        Self {
            tree: self.tree.clone(),
            leaves: self.leaves.iter().map(|l| RwLock::new(l.read().clone())).collect(),
            policy: self.policy,
        }
    }
}

impl HMatrix {
    /// All blocks zero.
    pub fn zeros(tree: Arc<BlockTree>, policy: TruncationPolicy) -> Self {
        let leaves = (0..tree.len()).map(|_| RwLock::new(None)).collect();
        Self { tree, leaves, policy }
    }

    /// Inadmissible leaves are stored dense, admissible leaves as compressed
    /// low-rank blocks of the densely evaluated kernel.
    pub fn assemble(tree: Arc<BlockTree>, kernel: &dyn Kernel, policy: TruncationPolicy) -> Self {
        let leaf_ids: Vec<BlockId> = tree.leaves().collect();
        let rperm = tree.row_tree().permutation();
        let cperm = tree.col_tree().permutation();
        let built = crate::par::map(&leaf_ids, |&b| {
            let node = tree.node(b);
            let d = DMatrix::from_fn(node.rows.size(), node.cols.size(), |i, j| {
                kernel.eval(rperm[node.rows.first + i], cperm[node.cols.first + j])
            });
            if node.admissible {
                Leaf::LowRank(compress(&d, policy))
            } else {
                Leaf::Dense(d)
            }
        });
        let h = Self::zeros(tree, policy);
        for (b, leaf) in leaf_ids.into_iter().zip(built) {
            *h.leaves[b.index()].write() = Some(leaf);
        }
        h
    }

    pub fn tree(&self) -> &Arc<BlockTree> {
        &self.tree
    }

    pub fn policy(&self) -> TruncationPolicy {
        self.policy
    }

    pub fn block(&self, b: BlockId) -> &Block {
        self.tree.node(b)
    }

    pub fn leaf(&self, b: BlockId) -> RwLockReadGuard<'_, Option<Leaf>> {
        self.leaves[b.index()].read()
    }

    pub fn leaf_mut(&self, b: BlockId) -> RwLockWriteGuard<'_, Option<Leaf>> {
        self.leaves[b.index()].write()
    }

    pub fn set_leaf(&self, b: BlockId, leaf: Option<Leaf>) -> Result<()> {
        let node = self.tree.node(b);
        if !node.is_leaf() {
            return Err(Error::NotRefinable(format!("{b} is not a leaf")));
        }
        if let Some(l) = &leaf {
            check_leaf_dims("leaf", l, node.rows.size(), node.cols.size())?;
        }
        *self.leaves[b.index()].write() = leaf;
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.tree.node(self.tree.root()).rows.size()
    }

    pub fn ncols(&self) -> usize {
        self.tree.node(self.tree.root()).cols.size()
    }

    /// Dense matrix in permuted (cluster) ordering.
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.block_to_dense(self.tree.root())
    }

    pub fn block_to_dense(&self, b: BlockId) -> DMatrix<f64> {
        let node = self.tree.node(b);
        let mut out = DMatrix::zeros(node.rows.size(), node.cols.size());
        for leaf in self.tree.leaves_below(b) {
            let ln = self.tree.node(leaf);
            if let Some(l) = self.leaf(leaf).as_ref() {
                let r = ln.rows.local_in(&node.rows);
                let c = ln.cols.local_in(&node.cols);
                let mut view = out.view_mut((r.start, c.start), (r.len(), c.len()));
                match l {
                    Leaf::Dense(d) => view += d,
                    Leaf::LowRank(lr) if lr.rank() > 0 => {
                        view.gemm(1.0, &lr.u, &lr.v.transpose(), 1.0)
                    }
                    Leaf::LowRank(_) => {}
                }
            }
        }
        out
    }

    /// Dense matrix in original index ordering.
    pub fn to_dense_original(&self) -> DMatrix<f64> {
        let d = self.to_dense();
        let rp = self.tree.row_tree().permutation();
        let cp = self.tree.col_tree().permutation();
        let mut out = DMatrix::zeros(d.nrows(), d.ncols());
        for j in 0..d.ncols() {
            for i in 0..d.nrows() {
                out[(rp[i], cp[j])] = d[(i, j)];
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.tree
            .leaves()
            .filter_map(|b| self.leaf(b).as_ref().map(|l| l.frobenius().powi(2)))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest rank over all low-rank leaves.
    pub fn max_rank(&self) -> usize {
        self.tree
            .leaves()
            .filter_map(|b| self.leaf(b).as_ref().and_then(Leaf::rank))
            .max()
            .unwrap_or(0)
    }

    /// `M_b * x` for a dense `x` with `cols(b)` rows.
    pub fn mul_dense(&self, b: BlockId, x: DMatrixView<'_, f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.tree.node(b).rows.size(), x.ncols());
        self.mul_dense_acc(b, x, out.as_view_mut());
        out
    }

    fn mul_dense_acc(&self, b: BlockId, x: DMatrixView<'_, f64>, mut out: DMatrixViewMut<'_, f64>) {
        let node = self.tree.node(b);
        if node.is_leaf() {
            match self.leaf(b).as_ref() {
                Some(Leaf::Dense(d)) => out.gemm(1.0, d, &x, 1.0),
                Some(Leaf::LowRank(lr)) if lr.rank() > 0 => {
                    let t = lr.v.tr_mul(&x);
                    out.gemm(1.0, &lr.u, &t, 1.0);
                }
                _ => {}
            }
            return;
        }
        for &c in &node.children {
            let cn = self.tree.node(c);
            let r = cn.rows.local_in(&node.rows);
            let k = cn.cols.local_in(&node.cols);
            self.mul_dense_acc(c, x.rows(k.start, k.len()), out.rows_mut(r.start, r.len()));
        }
    }

    /// `x * M_b` for a dense `x` with `rows(b)` columns.
    pub fn dense_mul(&self, x: DMatrixView<'_, f64>, b: BlockId) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), self.tree.node(b).cols.size());
        self.dense_mul_acc(x, b, out.as_view_mut());
        out
    }

    fn dense_mul_acc(&self, x: DMatrixView<'_, f64>, b: BlockId, mut out: DMatrixViewMut<'_, f64>) {
        let node = self.tree.node(b);
        if node.is_leaf() {
            match self.leaf(b).as_ref() {
                Some(Leaf::Dense(d)) => out.gemm(1.0, &x, d, 1.0),
                Some(Leaf::LowRank(lr)) if lr.rank() > 0 => {
                    let t = x * &lr.u;
                    out.gemm(1.0, &t, &lr.v.transpose(), 1.0);
                }
                _ => {}
            }
            return;
        }
        for &c in &node.children {
            let cn = self.tree.node(c);
            let r = cn.rows.local_in(&node.rows);
            let k = cn.cols.local_in(&node.cols);
            self.dense_mul_acc(x.columns(r.start, r.len()), c, out.columns_mut(k.start, k.len()));
        }
    }

    /// Text dump: `rows cols` followed by one line per row.
    pub fn write_dense_text(&self) -> String {
        dense_to_text(&self.to_dense())
    }
}

pub fn dense_to_text(d: &DMatrix<f64>) -> String {
    let mut out = format!("{} {}\n", d.nrows(), d.ncols());
    for i in 0..d.nrows() {
        let row: Vec<String> = (0..d.ncols()).map(|j| format!("{:e}", d[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// `||a - b||_F / ||a||_F` with `0/0 = 0`.
pub fn rel_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let num = (a - b).norm();
    let den = a.norm();
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// A block of a specific H-matrix.
#[derive(Clone, Copy, Debug)]
pub struct HRef<'a> {
    pub mat: &'a HMatrix,
    pub block: BlockId,
}

impl<'a> HRef<'a> {
    pub fn new(mat: &'a HMatrix, block: BlockId) -> Self {
        Self { mat, block }
    }

    pub fn node(&self) -> &'a Block {
        self.mat.tree.node(self.block)
    }

    pub fn rows(&self) -> IndexSet {
        self.node().rows
    }

    pub fn cols(&self) -> IndexSet {
        self.node().cols
    }

    pub fn is_leaf(&self) -> bool {
        self.node().is_leaf()
    }

    pub fn child(&self, i: usize, j: usize) -> HRef<'a> {
        HRef::new(self.mat, self.mat.tree.child(self.block, i, j))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.mat.block_to_dense(self.block)
    }
}

/// `alpha * A * B` where at least one of the operands or the destination is
/// a leaf, evaluated to a dense or low-rank matrix. `None` means zero.
pub(crate) fn product(alpha: f64, a: HRef<'_>, b: HRef<'_>) -> Option<Leaf> {
    let (m, n) = (a.rows().size(), b.cols().size());
    if alpha == 0.0 {
        return None;
    }
    let a_leaf = a.is_leaf().then(|| a.mat.leaf(a.block).clone());
    let b_leaf = b.is_leaf().then(|| b.mat.leaf(b.block).clone());
    if matches!(a_leaf, Some(None)) || matches!(b_leaf, Some(None)) {
        return None;
    }
    let out = match (a_leaf.flatten(), b_leaf.flatten()) {
        (Some(x), Some(y)) => leaf_product(alpha, &x, &y).expect("conformal leaves"),
        (Some(Leaf::LowRank(x)), None) => {
            let v = b.mat.dense_mul(x.v.transpose().as_view(), b.block).transpose();
            Leaf::LowRank(LowRank { u: alpha * x.u, v })
        }
        (Some(Leaf::Dense(x)), None) => Leaf::Dense(alpha * b.mat.dense_mul(x.as_view(), b.block)),
        (None, Some(Leaf::LowRank(y))) => Leaf::LowRank(LowRank {
            u: alpha * a.mat.mul_dense(a.block, y.u.as_view()),
            v: y.v,
        }),
        (None, Some(Leaf::Dense(y))) => Leaf::Dense(alpha * a.mat.mul_dense(a.block, y.as_view())),
        (None, None) => {
            let y = b.to_dense();
            Leaf::Dense(alpha * a.mat.mul_dense(a.block, y.as_view()))
        }
    };
    debug_assert_eq!((out.rows(), out.cols()), (m, n));
    Some(out)
}

/// Adds a leaf-form update into `c`, splitting it over the leaf
/// descendants when `c` is blocked.
pub(crate) fn add_into(c: HRef<'_>, upd: Leaf, ctx: &Ctx) {
    let node = c.node();
    if node.is_leaf() {
        leaf_add(&mut c.mat.leaf_mut(c.block), upd, node.admissible, ctx);
        return;
    }
    for &child in &node.children {
        let cn = c.mat.tree.node(child);
        let part = upd.restrict(cn.rows.local_in(&node.rows), cn.cols.local_in(&node.cols));
        add_into(HRef::new(c.mat, child), part, ctx);
    }
}
