//! Model problems: a single layer potential on the unit sphere, a 1D
//! logarithmic integral equation and a nested dissection structure on a 3D
//! grid graph.
//!
//! Kernels are evaluated at points (no quadrature). The nested dissection
//! problem describes block structure only; [`GridLaplacian`] is a
//! stand-in operator so that it can also be factorized.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hmatrix::Kernel;
use crate::trees::{
    build_block_tree, build_cluster_tree, nd_admissible, standard_admissible, BlockTree, ClusterId,
    ClusterTree, Coupling, Geometry, IndexSet,
};

/// Leaf size used for all model problems.
pub const N_MIN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Sphere,
    OneD,
    Nd,
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "1d" => Ok(Self::OneD),
            "nd" => Ok(Self::Nd),
            _ => Err(Error::InvalidParameter(format!("unknown problem '{s}' (sphere, 1d, nd)"))),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sphere => "sphere",
            Self::OneD => "1d",
            Self::Nd => "nd",
        })
    }
}

/// `w / |x_i - x_j|` with quadrature weight `w = 4 pi / n`; the diagonal is
/// the integral of `1/r` over a disc of area `w`.
#[derive(Clone, Debug)]
pub struct SphereKernel {
    points: Geometry,
    weight: f64,
}

impl Kernel for SphereKernel {
    fn eval(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 2.0 * PI * (self.weight / PI).sqrt();
        }
        let (a, b) = (self.points.point(i), self.points.point(j));
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.weight / d2.sqrt()
    }
}

/// `log|x_i - x_j| / n` for midpoints `x_i = (i + 1/2) / n`; the diagonal is
/// the element self-integral `(log(1/(2n)) - 1) / n`.
#[derive(Clone, Copy, Debug)]
pub struct LogKernel {
    n: usize,
}

impl Kernel for LogKernel {
    fn eval(&self, i: usize, j: usize) -> f64 {
        let h = 1.0 / self.n as f64;
        if i == j {
            ((0.5 * h).ln() - 1.0) * h
        } else {
            ((i as f64 - j as f64).abs() * h).ln() * h
        }
    }
}

/// Adds `c * n` to the diagonal of a kernel.
#[derive(Clone, Debug)]
pub struct Shifted<K> {
    inner: K,
    shift: f64,
}

impl<K: Kernel> Kernel for Shifted<K> {
    fn eval(&self, i: usize, j: usize) -> f64 {
        let v = self.inner.eval(i, j);
        if i == j {
            v + self.shift
        } else {
            v
        }
    }
}

pub fn shifted<K: Kernel>(kernel: K, c: f64, n: usize) -> Shifted<K> {
    Shifted { inner: kernel, shift: c * n as f64 }
}

/// `n` points on the unit sphere along a Fibonacci spiral.
pub fn sphere_problem(n: usize) -> Result<(Geometry, SphereKernel)> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!("sphere needs n >= 4, got {n}")));
    }
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut coords = Vec::with_capacity(3 * n);
    for i in 0..n {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = golden * i as f64;
        coords.extend_from_slice(&[r * phi.cos(), r * phi.sin(), z]);
    }
    let points = Geometry::new(3, coords)?;
    Ok((points.clone(), SphereKernel { points, weight: 4.0 * PI / n as f64 }))
}

pub fn one_d_problem(n: usize) -> Result<(Geometry, LogKernel)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("1d needs n >= 2, got {n}")));
    }
    let coords = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    Ok((Geometry::new(1, coords)?, LogKernel { n }))
}

/// 7-point stencil graph of an `m x m x m` grid; index `x + m (y + m z)`.
#[derive(Clone, Debug)]
pub struct GridGraph {
    m: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
}

impl GridGraph {
    pub fn side(&self) -> usize {
        self.m
    }

    fn coords(&self, i: usize) -> [usize; 3] {
        [i % self.m, (i / self.m) % self.m, i / (self.m * self.m)]
    }

    fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.coords(i);
        let m = self.m;
        (0..3).flat_map(move |axis| {
            let stride = [1, m, m * m][axis];
            let lo = (c[axis] > 0).then(|| i - stride);
            let hi = (c[axis] + 1 < m).then(|| i + stride);
            lo.into_iter().chain(hi)
        })
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbours(i).any(|k| k == j)
    }
}

impl Coupling for GridGraph {
    fn coupled(&self, t: IndexSet, s: IndexSet) -> bool {
        let (small, big) = if t.size() <= s.size() { (t, s) } else { (s, t) };
        (small.first..small.last).any(|pos| {
            self.neighbours(self.perm[pos]).any(|k| {
                let p = self.inv[k];
                big.first <= p && p < big.last
            })
        })
    }
}

/// Laplacian of the grid graph: 6 on the diagonal, -1 between neighbours.
#[derive(Clone, Debug)]
pub struct GridLaplacian {
    graph: GridGraph,
}

impl Kernel for GridLaplacian {
    fn eval(&self, i: usize, j: usize) -> f64 {
        if i == j {
            6.0
        } else if self.graph.adjacent(i, j) {
            -1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct GridBox {
    lo: [usize; 3],
    hi: [usize; 3],
}

impl GridBox {
    fn size(&self) -> usize {
        (0..3).map(|a| self.hi[a] - self.lo[a]).product()
    }

    fn widest(&self) -> usize {
        let mut best = 0;
        for a in 1..3 {
            if self.hi[a] - self.lo[a] > self.hi[best] - self.lo[best] {
                best = a;
            }
        }
        best
    }

    fn split(&self, axis: usize, at: usize) -> (GridBox, GridBox) {
        let (mut l, mut r) = (*self, *self);
        l.hi[axis] = at;
        r.lo[axis] = at;
        (l, r)
    }

    fn push_indices(&self, m: usize, out: &mut Vec<usize>) {
        for z in self.lo[2]..self.hi[2] {
            for y in self.lo[1]..self.hi[1] {
                for x in self.lo[0]..self.hi[0] {
                    out.push(x + m * (y + m * z));
                }
            }
        }
    }
}

/// Nested dissection cluster tree over the `m^3` grid graph. A domain is
/// split by the middle plane of its widest axis into `left`, `right` and the
/// separator plane; sons are `[(left, right), separator]`. When `right` is
/// empty the sons are `[left, separator]`. Separators are bisected
/// geometrically. Clusters carry no bounding boxes.
pub fn nd_problem(m: usize, n_min: usize) -> Result<(ClusterTree, GridGraph)> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!("nd needs m >= 2, got {m}")));
    }
    if n_min == 0 {
        return Err(Error::InvalidParameter("n_min must be positive".into()));
    }
    let full = GridBox { lo: [0; 3], hi: [m; 3] };
    let mut perm = Vec::with_capacity(m * m * m);
    let mut tree = ClusterTree::with_permutation(Vec::new());
    dissect(full, m, n_min, None, &mut perm, &mut tree);
    let mut inv = vec![0; perm.len()];
    for (pos, &i) in perm.iter().enumerate() {
        inv[i] = pos;
    }
    let tree = tree.finish(perm.clone());
    Ok((tree, GridGraph { m, perm, inv }))
}

fn dissect(
    b: GridBox,
    m: usize,
    n_min: usize,
    parent: Option<ClusterId>,
    perm: &mut Vec<usize>,
    tree: &mut ClusterTree,
) -> ClusterId {
    let start = perm.len();
    let id = tree.push(IndexSet::new(start, start + b.size()), parent, None);
    if b.size() <= n_min {
        b.push_indices(m, perm);
        return id;
    }
    let axis = b.widest();
    let mid = b.lo[axis] + (b.hi[axis] - b.lo[axis]) / 2;
    let (left, rest) = b.split(axis, mid);
    let (sep, right) = rest.split(axis, mid + 1);
    if right.size() > 0 {
        let lr_size = left.size() + right.size();
        let lr = tree.push(IndexSet::new(start, start + lr_size), Some(id), None);
        dissect(left, m, n_min, Some(lr), perm, tree);
        dissect(right, m, n_min, Some(lr), perm, tree);
    } else {
        dissect(left, m, n_min, Some(id), perm, tree);
    }
    bisect_separator(sep, m, n_min, id, perm, tree);
    id
}

fn bisect_separator(
    b: GridBox,
    m: usize,
    n_min: usize,
    parent: ClusterId,
    perm: &mut Vec<usize>,
    tree: &mut ClusterTree,
) {
    let start = perm.len();
    let id = tree.push(IndexSet::new(start, start + b.size()), Some(parent), None);
    if b.size() <= n_min {
        b.push_indices(m, perm);
        return;
    }
    let axis = b.widest();
    let mid = b.lo[axis] + (b.hi[axis] - b.lo[axis]).div_ceil(2);
    let (l, r) = b.split(axis, mid);
    bisect_separator(l, m, n_min, id, perm, tree);
    bisect_separator(r, m, n_min, id, perm, tree);
}

/// A model problem with its trees and kernel.
#[derive(Clone)]
pub struct Problem {
    pub kind: ProblemKind,
    pub n: usize,
    pub geometry: Option<Geometry>,
    pub clusters: Arc<ClusterTree>,
    pub blocks: Arc<BlockTree>,
    kernel: Arc<dyn Kernel>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("kind", &self.kind)
            .field("n", &self.n)
            .field("blocks", &self.blocks.len())
            .finish()
    }
}

impl Problem {
    /// Builds trees for `n` unknowns. For `nd`, the grid side is the rounded
    /// cube root of `n` and `n` becomes its cube. `shift` adds `shift * n` to
    /// the diagonal of the kernel.
    pub fn new(kind: ProblemKind, n: usize, shift: f64) -> Result<Self> {
        Self::with_leaf_size(kind, n, shift, N_MIN)
    }

    pub fn with_leaf_size(kind: ProblemKind, n: usize, shift: f64, n_min: usize) -> Result<Self> {
        match kind {
            ProblemKind::Sphere => {
                let (g, k) = sphere_problem(n)?;
                Self::geometric(kind, g, shifted(k, shift, n), 2.0, n_min)
            }
            ProblemKind::OneD => {
                let (g, k) = one_d_problem(n)?;
                Self::geometric(kind, g, shifted(k, shift, n), 1.0, n_min)
            }
            ProblemKind::Nd => {
                let m = ((n as f64).cbrt().round() as usize).max(2);
                let (ct, graph) = nd_problem(m, n_min)?;
                let ct = Arc::new(ct);
                let blocks = build_block_tree(ct.clone(), ct.clone(), |r, t, c, s| {
                    Ok(nd_admissible(r.node(t), c.node(s), &graph))
                })?;
                let n = m * m * m;
                Ok(Self {
                    kind,
                    n,
                    geometry: None,
                    clusters: ct,
                    blocks: Arc::new(blocks),
                    kernel: Arc::new(shifted(GridLaplacian { graph }, shift, n)),
                })
            }
        }
    }

    fn geometric<K: Kernel + 'static>(
        kind: ProblemKind,
        g: Geometry,
        kernel: K,
        eta: f64,
        n_min: usize,
    ) -> Result<Self> {
        let ct = Arc::new(build_cluster_tree(&g, n_min)?);
        let blocks = build_block_tree(ct.clone(), ct.clone(), |r, t, c, s| standard_admissible(r, t, c, s, eta))?;
        Ok(Self {
            kind,
            n: g.len(),
            geometry: Some(g),
            clusters: ct,
            blocks: Arc::new(blocks),
            kernel: Arc::new(kernel),
        })
    }

    pub fn kernel(&self) -> &dyn Kernel {
        self.kernel.as_ref()
    }

    /// Dense matrix in original index order.
    pub fn dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.kernel.eval(i, j))
    }

    /// Dense matrix in the permuted order of the cluster tree.
    pub fn dense_permuted(&self) -> nalgebra::DMatrix<f64> {
        let p = self.clusters.permutation();
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.kernel.eval(p[i], p[j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmatrix::{HMatrix, Leaf, TruncationPolicy};

    #[test]
    fn sphere_points_lie_on_unit_sphere() {
        let (g, k) = sphere_problem(500).unwrap();
        for i in 0..g.len() {
            let r: f64 = g.point(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert_eq!(k.eval(3, 17), k.eval(17, 3));
    }

    #[test]
    fn one_d_kernel_is_symmetric_with_negative_diagonal() {
        for n in [2, 3, 64] {
            let (_, k) = one_d_problem(n).unwrap();
            assert!(k.eval(0, 0) < 0.0);
            assert_eq!(k.eval(0, n - 1), k.eval(n - 1, 0));
        }
    }

    #[test]
    fn small_inputs_are_rejected() {
        assert!(sphere_problem(3).is_err());
        assert!(one_d_problem(1).is_err());
        assert!(nd_problem(1, 4).is_err());
    }

    #[test]
    fn nd_two_cube_has_one_separator_split() {
        let (t, _) = nd_problem(2, 4).unwrap();
        let root = t.node(t.root());
        assert_eq!(root.size(), 8);
        assert_eq!(root.children.len(), 2);
        let sizes: Vec<usize> = root.children.iter().map(|&c| t.node(c).size()).collect();
        assert_eq!(sizes, vec![4, 4]);
        assert!(root.children.iter().all(|&c| t.node(c).is_leaf()));
        let mut p = t.permutation().to_vec();
        p.sort_unstable();
        assert_eq!(p, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn nd_subdomains_are_decoupled() {
        let (t, g) = nd_problem(8, 16).unwrap();
        let root = t.node(t.root());
        let lr = t.node(root.children[0]);
        let (l, r) = (t.node(lr.children[0]), t.node(lr.children[1]));
        assert!(nd_admissible(l, r, &g));
        let sep = t.node(root.children[1]);
        assert!(!nd_admissible(l, sep, &g));
    }

    #[test]
    fn sphere_ranks_are_small() {
        let p = Problem::new(ProblemKind::Sphere, 512, 0.0).unwrap();
        let h = HMatrix::assemble(p.blocks.clone(), p.kernel(), TruncationPolicy::FixedAccuracy(1e-6));
        let mut admissible = 0;
        for b in p.blocks.leaves() {
            if let Some(Leaf::LowRank(r)) = h.leaf(b).as_ref() {
                admissible += 1;
                assert!(r.rank() <= 30, "rank {}", r.rank());
            }
        }
        assert!(admissible > 0);
    }

    #[test]
    fn problems_are_deterministic() {
        for kind in [ProblemKind::Sphere, ProblemKind::OneD, ProblemKind::Nd] {
            let a = Problem::new(kind, 512, 0.5).unwrap();
            let b = Problem::new(kind, 512, 0.5).unwrap();
            assert_eq!(a.blocks.serialize(), b.blocks.serialize());
            assert_eq!(a.clusters.permutation(), b.clusters.permutation());
        }
    }
}
