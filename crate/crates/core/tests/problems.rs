use std::collections::BTreeMap;

use hmat_dag::hmatrix::{HMatrix, Leaf, TruncationPolicy};
use hmat_dag::problems::{Problem, ProblemKind};
use hmat_dag::trees::BlockTree;

fn admissible_per_level(tree: &BlockTree) -> BTreeMap<u32, usize> {
    let mut out = BTreeMap::new();
    for b in tree.leaves() {
        let n = tree.node(b);
        if n.admissible {
            *out.entry(n.level).or_default() += 1;
        }
    }
    out
}

/// Admissible block count per level for `n` uniform midpoints in [0, 1]
/// split into halves until `leaf` points remain, from interval boxes.
fn interval_census(n: usize, leaf: usize, eta: f64) -> BTreeMap<u32, usize> {
    let bbox = |k: usize, s: usize| ((k * s) as f64 + 0.5) / n as f64..(((k + 1) * s) as f64 - 0.5) / n as f64;
    let mut out = BTreeMap::new();
    let mut level = 0u32;
    let mut front = vec![(0usize, 0usize)];
    let mut size = n;
    while !front.is_empty() && size > leaf {
        level += 1;
        size /= 2;
        let mut next = Vec::new();
        for (i, j) in front {
            for (ci, cj) in [(2 * i, 2 * j), (2 * i, 2 * j + 1), (2 * i + 1, 2 * j), (2 * i + 1, 2 * j + 1)] {
                let (a, b) = (bbox(ci, size), bbox(cj, size));
                let diam = (a.end - a.start).min(b.end - b.start);
                let dist = (b.start - a.end).max(a.start - b.end).max(0.0);
                if diam <= eta * dist {
                    *out.entry(level).or_default() += 1;
                } else {
                    next.push((ci, cj));
                }
            }
        }
        front = next;
    }
    out
}

#[test]
fn one_d_census_matches_interval_oracle() {
    let p = Problem::new(ProblemKind::OneD, 1024, 0.0).unwrap();
    let census = admissible_per_level(&p.blocks);
    assert_eq!(census, interval_census(1024, 32, 1.0));
    // a band of three blocks per cluster pair remains at every level
    for (&l, &c) in &census {
        assert_eq!(c, 6 * ((1 << (l - 1)) - 1), "level {l}");
    }
}

#[test]
fn one_d_structure_is_coarser_than_sphere() {
    let a = Problem::new(ProblemKind::OneD, 4096, 0.5).unwrap();
    let b = Problem::new(ProblemKind::Sphere, 4096, 0.5).unwrap();
    assert!(a.blocks.len() * 3 < b.blocks.len(), "{} vs {}", a.blocks.len(), b.blocks.len());
}

#[test]
fn nd_top_level_off_diagonal_is_mostly_admissible() {
    let p = Problem::new(ProblemKind::Nd, 16 * 16 * 16, 0.0).unwrap();
    assert_eq!(p.n, 4096);
    let tree = &p.blocks;
    let top: Vec<_> = tree.node(tree.root()).children.clone();
    let (mut area, mut adm) = (0usize, 0usize);
    for &b in &top {
        let n = tree.node(b);
        if n.rows == n.cols {
            continue;
        }
        area += n.rows.size() * n.cols.size();
        adm += tree
            .leaves_below(b)
            .into_iter()
            .map(|l| tree.node(l))
            .filter(|l| l.admissible)
            .map(|l| l.rows.size() * l.cols.size())
            .sum::<usize>();
    }
    assert!(adm * 10 >= area * 3, "{adm} of {area}");
}

#[test]
fn nd_admissible_blocks_are_zero() {
    let p = Problem::new(ProblemKind::Nd, 512, 0.0).unwrap();
    let k = p.kernel();
    for b in p.blocks.leaves() {
        let n = p.blocks.node(b);
        if n.admissible {
            for i in n.rows.first..n.rows.last {
                for j in n.cols.first..n.cols.last {
                    let pm = p.clusters.permutation();
                    assert_eq!(k.eval(pm[i], pm[j]), 0.0);
                }
            }
        }
    }
}

#[test]
fn shifted_kernel_raises_diagonal_by_c_n() {
    let a = Problem::new(ProblemKind::Sphere, 256, 0.0).unwrap();
    let b = Problem::new(ProblemKind::Sphere, 256, 0.5).unwrap();
    for i in [0, 17, 255] {
        assert!((b.kernel().eval(i, i) - a.kernel().eval(i, i) - 128.0).abs() < 1e-12);
        assert_eq!(b.kernel().eval(i, (i + 1) % 256), a.kernel().eval(i, (i + 1) % 256));
    }
}

#[test]
fn assembled_sphere_reproduces_dense_matrix() {
    let p = Problem::new(ProblemKind::Sphere, 512, 0.5).unwrap();
    let h = HMatrix::assemble(p.blocks.clone(), p.kernel(), TruncationPolicy::FixedAccuracy(1e-6));
    let d = p.dense_permuted();
    let err = (&d - h.to_dense()).norm() / d.norm();
    assert!(err < 1e-5, "{err:e}");
    let max_rank = p
        .blocks
        .leaves()
        .filter_map(|b| match h.leaf(b).as_ref() {
            Some(Leaf::LowRank(r)) => Some(r.rank()),
            _ => None,
        })
        .max()
        .unwrap();
    assert!(max_rank <= 30, "{max_rank}");
}
