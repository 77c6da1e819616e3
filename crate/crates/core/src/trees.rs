//! Cluster trees over index sets and block trees over products of index sets.
//!
//! Clusters own contiguous ranges of a permuted index set: construction
//! reorders the indices so that every cluster is an interval `[first, last)`
//! of positions, and the tree carries the permutation from positions back to
//! the original indices. Block intersection then reduces to two interval
//! overlap tests.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Half-open range of (permuted) index positions `[first, last)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexSet {
    pub first: usize,
    pub last: usize,
}

impl IndexSet {
    pub fn new(first: usize, last: usize) -> Self {
        assert!(first <= last, "index set [{first}, {last}) is reversed");
        Self { first, last }
    }

    pub fn size(&self) -> usize {
        self.last - self.first
    }

    pub fn is_empty(&self) -> bool {
        self.first == self.last
    }

    pub fn intersects(&self, other: &IndexSet) -> bool {
        self.first < other.last && other.first < self.last
    }

    pub fn contains_set(&self, other: &IndexSet) -> bool {
        self.first <= other.first && other.last <= self.last
    }

    /// Position of `self` relative to the start of `outer`.
    pub fn local_in(&self, outer: &IndexSet) -> std::ops::Range<usize> {
        debug_assert!(outer.contains_set(self));
        (self.first - outer.first)..(self.last - outer.first)
    }
}

impl std::fmt::Display for IndexSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{},{})", self.first, self.last)
    }
}

/// Point coordinates, one point per global index.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    dim: usize,
    coords: Vec<f64>,
}

impl Geometry {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points<const D: usize>(points: &[[f64; D]]) -> Self {
        Self {
            dim: D,
            coords: points.iter().flatten().copied().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// CSV with header `index,x[,y,z]`.
    pub fn to_csv(&self) -> String {
        let axes = ["x", "y", "z"];
        let mut out = String::from("index");
        for a in axes.iter().take(self.dim) {
            out.push(',');
            out.push_str(a);
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{i}");
            for c in self.point(i) {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Axis-aligned bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct BBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BBox {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Self {
        assert_eq!(min.len(), max.len());
        Self { min, max }
    }

    fn of_points(geom: &Geometry, indices: &[usize]) -> Self {
        let mut min = vec![f64::INFINITY; geom.dim()];
        let mut max = vec![f64::NEG_INFINITY; geom.dim()];
        for &i in indices {
            for (d, &c) in geom.point(i).iter().enumerate() {
                min[d] = min[d].min(c);
                max[d] = max[d].max(c);
            }
        }
        Self { min, max }
    }

    pub fn diam(&self) -> f64 {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dist(&self, other: &BBox) -> f64 {
        let mut d2 = 0.0;
        for d in 0..self.min.len() {
            let gap = (other.min[d] - self.max[d]).max(self.min[d] - other.max[d]);
            if gap > 0.0 {
                d2 += gap * gap;
            }
        }
        d2.sqrt()
    }

    fn widest_axis(&self) -> usize {
        let mut best = 0;
        for d in 1..self.min.len() {
            if self.max[d] - self.min[d] > self.max[best] - self.min[best] {
                best = d;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClusterId(pub u32);

impl ClusterId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub indices: IndexSet,
    pub children: Vec<ClusterId>,
    pub parent: Option<ClusterId>,
    pub level: u32,
    pub bbox: Option<BBox>,
}

impl Cluster {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn size(&self) -> usize {
        self.indices.size()
    }
}

/// Cluster tree stored as an arena in depth-first pre-order; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterTree {
    nodes: Vec<Cluster>,
    perm: Vec<usize>,
}

impl ClusterTree {
    pub(crate) fn with_permutation(perm: Vec<usize>) -> Self {
        Self {
            nodes: Vec::new(),
            perm,
        }
    }

    pub(crate) fn finish(mut self, perm: Vec<usize>) -> Self {
        self.perm = perm;
        self
    }

    pub(crate) fn push(
        &mut self,
        indices: IndexSet,
        parent: Option<ClusterId>,
        bbox: Option<BBox>,
    ) -> ClusterId {
        let id = ClusterId(self.nodes.len() as u32);
        let level = parent.map_or(0, |p| self.nodes[p.index()].level + 1);
        self.nodes.push(Cluster {
            indices,
            children: Vec::new(),
            parent,
            level,
            bbox,
        });
        if let Some(p) = parent {
            self.nodes[p.index()].children.push(id);
        }
        id
    }

    pub fn root(&self) -> ClusterId {
        ClusterId(0)
    }

    pub fn node(&self, id: ClusterId) -> &Cluster {
        &self.nodes[id.index()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ClusterId> {
        (0..self.nodes.len() as u32).map(ClusterId)
    }

    /// Permutation from positions to original indices.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse_permutation(&self) -> Vec<usize> {
        let mut inv = vec![0; self.perm.len()];
        for (pos, &orig) in self.perm.iter().enumerate() {
            inv[orig] = pos;
        }
        inv
    }

    pub fn leaves(&self) -> impl Iterator<Item = ClusterId> + '_ {
        self.ids().filter(|&c| self.node(c).is_leaf())
    }

    /// Number of levels (a single root has depth 1).
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|c| c.level as usize + 1).max().unwrap_or(0)
    }

    /// Line format `id parent first last leaf adm`; `adm` is always 0 for clusters.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.nodes.iter().enumerate() {
            let parent = c.parent.map_or(-1, |p| p.0 as i64);
            let _ = writeln!(
                out,
                "{i} {parent} {} {} {} 0",
                c.indices.first,
                c.indices.last,
                u8::from(c.is_leaf())
            );
        }
        out
    }
}

/// Binary cluster tree by cardinality-balanced bisection along the widest
/// bounding box axis. Odd clusters give the extra index to the left son.
pub fn build_cluster_tree(geom: &Geometry, n_min: usize) -> Result<ClusterTree> {
    if geom.is_empty() {
        return Err(Error::EmptyGeometry);
    }
    if n_min == 0 {
        return Err(Error::InvalidParameter("n_min must be positive".into()));
    }
    let mut perm: Vec<usize> = (0..geom.len()).collect();
    let mut tree = ClusterTree::with_permutation(Vec::new());
    bisect(geom, n_min, &mut perm, 0, None, &mut tree);
    tree.perm = perm;
    Ok(tree)
}

fn bisect(
    geom: &Geometry,
    n_min: usize,
    perm: &mut [usize],
    offset: usize,
    parent: Option<ClusterId>,
    tree: &mut ClusterTree,
) {
    let bbox = BBox::of_points(geom, perm);
    let axis = bbox.widest_axis();
    let id = tree.push(IndexSet::new(offset, offset + perm.len()), parent, Some(bbox));
    if perm.len() <= n_min || perm.len() < 2 {
        return;
    }
    perm.sort_by(|&a, &b| {
        geom.point(a)[axis]
            .total_cmp(&geom.point(b)[axis])
            .then(a.cmp(&b))
    });
    let mid = perm.len().div_ceil(2);
    let (left, right) = perm.split_at_mut(mid);
    bisect(geom, n_min, left, offset, Some(id), tree);
    bisect(geom, n_min, right, offset + mid, Some(id), tree);
}

/// `min(diam(t), diam(s)) <= eta * dist(t, s)` on the cluster bounding boxes.
pub fn standard_admissible(
    rows: &ClusterTree,
    t: ClusterId,
    cols: &ClusterTree,
    s: ClusterId,
    eta: f64,
) -> Result<bool> {
    let bt = rows.node(t).bbox.as_ref().ok_or(Error::MissingBoundingBox(t.index()))?;
    let bs = cols.node(s).bbox.as_ref().ok_or(Error::MissingBoundingBox(s.index()))?;
    Ok(bt.diam().min(bs.diam()) <= eta * bt.dist(bs))
}

/// Sparse coupling between index positions, e.g. the graph of a sparse matrix.
pub trait Coupling {
    /// True if some index in `t` is coupled with some index in `s`.
    fn coupled(&self, t: IndexSet, s: IndexSet) -> bool;
}

/// Algebraic admissibility: a block is admissible iff no coupling connects
/// its row and column clusters. Overlapping clusters are never admissible.
pub fn nd_admissible(t: &Cluster, s: &Cluster, coupling: &impl Coupling) -> bool {
    !t.indices.intersects(&s.indices) && !coupling.coupled(t.indices, s.indices)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "b{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub row: ClusterId,
    pub col: ClusterId,
    pub rows: IndexSet,
    pub cols: IndexSet,
    /// Row-major grid of sons, `row_sons x col_sons`; empty for leaves.
    pub children: Vec<BlockId>,
    pub col_sons: usize,
    pub parent: Option<BlockId>,
    pub level: u32,
    pub admissible: bool,
}

impl Block {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn row_sons(&self) -> usize {
        if self.col_sons == 0 {
            0
        } else {
            self.children.len() / self.col_sons
        }
    }

    pub fn min_dim(&self) -> usize {
        self.rows.size().min(self.cols.size())
    }
}

#[derive(Clone, Debug)]
pub struct BlockTree {
    nodes: Vec<Block>,
    row_tree: Arc<ClusterTree>,
    col_tree: Arc<ClusterTree>,
}

impl PartialEq for BlockTree {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
    }
}

impl BlockTree {
    pub fn root(&self) -> BlockId {
        BlockId(0)
    }

    pub fn node(&self, id: BlockId) -> &Block {
        &self.nodes[id.index()]
    }

    /// Son `(i, j)` of a non-leaf block.
    pub fn child(&self, id: BlockId, i: usize, j: usize) -> BlockId {
        let b = &self.nodes[id.index()];
        debug_assert!(!b.is_leaf() && j < b.col_sons);
        b.children[i * b.col_sons + j]
    }

    pub fn is_leaf(&self, id: BlockId) -> bool {
        self.nodes[id.index()].is_leaf()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = BlockId> {
        (0..self.nodes.len() as u32).map(BlockId)
    }

    pub fn leaves(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.ids().filter(|&b| self.is_leaf(b))
    }

    /// Leaves of the subtree rooted at `id`, in depth-first order.
    pub fn leaves_below(&self, id: BlockId) -> Vec<BlockId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(b) = stack.pop() {
            let node = self.node(b);
            if node.is_leaf() {
                out.push(b);
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
        out
    }

    pub fn row_tree(&self) -> &Arc<ClusterTree> {
        &self.row_tree
    }

    pub fn col_tree(&self) -> &Arc<ClusterTree> {
        &self.col_tree
    }

    /// Block with the given cluster pair, searched from the root.
    pub fn find(&self, row: ClusterId, col: ClusterId) -> Option<BlockId> {
        let rows = self.row_tree.node(row).indices;
        let cols = self.col_tree.node(col).indices;
        let mut cur = self.root();
        loop {
            let b = self.node(cur);
            if b.row == row && b.col == col {
                return Some(cur);
            }
            cur = *b
                .children
                .iter()
                .find(|&&c| {
                    let n = self.node(c);
                    n.rows.contains_set(&rows) && n.cols.contains_set(&cols)
                })?;
        }
    }

    /// Line format `id parent r0,c0 r1,c1 leaf adm`: the block's first and
    /// last positions as row,column pairs.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (i, b) in self.nodes.iter().enumerate() {
            let parent = b.parent.map_or(-1, |p| p.0 as i64);
            let _ = writeln!(
                out,
                "{i} {parent} {},{} {},{} {} {}",
                b.rows.first,
                b.cols.first,
                b.rows.last,
                b.cols.last,
                u8::from(b.is_leaf()),
                u8::from(b.admissible)
            );
        }
        out
    }
}

/// Block tree over `rows x cols`: a block is a leaf iff it is admissible or
/// one of its clusters is a leaf, otherwise its sons are the full cross
/// product of the cluster sons.
pub fn build_block_tree<F>(
    rows: Arc<ClusterTree>,
    cols: Arc<ClusterTree>,
    mut adm: F,
) -> Result<BlockTree>
where
    F: FnMut(&ClusterTree, ClusterId, &ClusterTree, ClusterId) -> Result<bool>,
{
    let mut nodes: Vec<Block> = Vec::new();
    let mut stack = vec![(rows.root(), cols.root(), None::<BlockId>)];
    // depth-first pre-order with sons emitted in row-major order
    while let Some((t, s, parent)) = stack.pop() {
        let id = BlockId(nodes.len() as u32);
        let admissible = adm(&rows, t, &cols, s)?;
        let (ct, cs) = (rows.node(t), cols.node(s));
        let level = parent.map_or(0, |p| nodes[p.index()].level + 1);
        nodes.push(Block {
            row: t,
            col: s,
            rows: ct.indices,
            cols: cs.indices,
            children: Vec::new(),
            col_sons: 0,
            parent,
            level,
            admissible,
        });
        if let Some(p) = parent {
            nodes[p.index()].children.push(id);
        }
        if admissible || ct.is_leaf() || cs.is_leaf() {
            continue;
        }
        nodes[id.index()].col_sons = cs.children.len();
        for &ti in ct.children.iter().rev() {
            for &sj in cs.children.iter().rev() {
                stack.push((ti, sj, Some(id)));
            }
        }
    }
    // admissible flag only describes leaves
    for b in nodes.iter_mut().filter(|b| !b.is_leaf()) {
        b.admissible = false;
    }
    Ok(BlockTree {
        nodes,
        row_tree: rows,
        col_tree: cols,
    })
}
