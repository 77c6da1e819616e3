mod common;

use common::{lu_trace, match_trace};
use hmat_dag::executor::{execute, execute_in_order, LuOperands};
use hmat_dag::hmatrix::{rel_error, Ctx, HMatrix, TruncationPolicy};
use hmat_dag::problems::{Problem, ProblemKind};
use hmat_dag::taskgraph::*;
use hmat_dag::trees::IndexSet;
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = ProblemKind> {
    prop_oneof![Just(ProblemKind::OneD), Just(ProblemKind::Sphere), Just(ProblemKind::Nd)]
}

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Std), Just(Mode::AccuCombined), Just(Mode::AccuMerged)]
}

fn set() -> impl Strategy<Value = IndexSet> {
    (0usize..40, 0usize..12).prop_map(|(a, len)| IndexSet::new(a, a + len))
}

fn mat_id() -> impl Strategy<Value = MatrixId> {
    prop_oneof![Just(MatrixId::A), Just(MatrixId::L), Just(MatrixId::U)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn intersection_matches_elementwise_overlap(i1 in mat_id(), r1 in set(), c1 in set(),
                                                i2 in mat_id(), r2 in set(), c2 in set()) {
        let a = DataDep::new(i1, r1, c1);
        let b = DataDep::new(i2, r2, c2);
        let shared = |x: IndexSet, y: IndexSet| (x.first..x.last).any(|k| y.first <= k && k < y.last);
        let brute = i1 == i2 && shared(r1, r2) && shared(c1, c2);
        prop_assert_eq!(a.intersects(&b), brute);
        prop_assert_eq!(b.intersects(&a), brute);
    }

    #[test]
    fn sequence_order_is_lexicographic(x in prop::collection::vec(0usize..8, 1..10),
                                       y in prop::collection::vec(0usize..8, 1..10)) {
        let seq = |d: &[usize]| d[1..].iter().fold(Seq::root(d[0] as u8 + 1), |s, &k| s.child(k));
        prop_assert_eq!(seq(&x).cmp(&seq(&y)), x.cmp(&y));
        prop_assert_eq!(seq(&x).depth() as usize, x.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn graphs_are_acyclic_and_build_deterministically(k in kind(), n in 8usize..400, leaf in 2usize..24,
                                                      m in mode(), sparsify in any::<bool>(),
                                                      path in 0usize..4, stop in prop_oneof![Just(0usize), 8usize..64]) {
        let p = Problem::with_leaf_size(k, n, 0.5, leaf).unwrap();
        let mut cfg = DagConfig::new(m);
        cfg.sparsify = sparsify && m != Mode::AccuCombined;
        cfg.max_path_len = path;
        cfg.stop_size = stop;
        cfg.chunk_size = 16;
        let g = compute_dag(&p.blocks, &cfg).unwrap();
        prop_assert!(g.check_acyclic());
        prop_assert_eq!(&par_compute_dag(&p.blocks, &cfg, 3).unwrap(), &g);
        if cfg.sparsify {
            cfg.sparsify = false;
            let full = compute_dag(&p.blocks, &cfg).unwrap();
            prop_assert!(g.num_edges() <= full.num_edges());
            prop_assert!(full.same_reachability(&g));
        }
    }

    #[test]
    fn std_nodes_are_the_leaf_operations(k in kind(), n in 8usize..300, leaf in 2usize..24) {
        let p = Problem::with_leaf_size(k, n, 0.5, leaf).unwrap();
        let g = compute_dag(&p.blocks, &DagConfig::new(Mode::Std)).unwrap();
        prop_assert!(match_trace(&g, &lu_trace(&p.blocks)).is_some());
    }

    #[test]
    fn locked_and_snapshot_sparsification_agree_on_reachability(k in kind(), n in 64usize..600, path in 0usize..3) {
        let p = Problem::new(k, n, 0.5).unwrap();
        let mut cfg = DagConfig::new(Mode::Std).sparsified();
        cfg.max_path_len = path;
        let a = compute_dag(&p.blocks, &cfg).unwrap();
        cfg.strategy = SparsifyStrategy::Locked;
        let b = par_compute_dag(&p.blocks, &cfg, 2).unwrap();
        prop_assert!(b.check_acyclic());
        prop_assert!(a.same_reachability(&b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn any_schedule_gives_the_same_exact_factors(n in 64usize..256, leaf in 4usize..16, seed in any::<u64>(),
                                                 m in mode()) {
        let p = Problem::with_leaf_size(ProblemKind::OneD, n, 0.5, leaf).unwrap();
        let pol = TruncationPolicy::Exact;
        let g = compute_dag(&p.blocks, &DagConfig::new(m)).unwrap();
        let a = HMatrix::assemble(p.blocks.clone(), p.kernel(), pol);
        let x = LuOperands::new(a.clone());
        execute(&g, &x, 2, &Ctx::new(pol)).unwrap();

        // random topological order from the seed
        let mut state = seed | 1;
        let mut indeg = g.in_degrees();
        let mut ready: Vec<u32> = (0..g.len() as u32).filter(|&i| indeg[i as usize] == 0).collect();
        let mut order = Vec::new();
        while !ready.is_empty() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let v = ready.swap_remove((state % ready.len() as u64) as usize);
            order.push(v);
            for &s in g.successors(v as usize) {
                indeg[s as usize] -= 1;
                if indeg[s as usize] == 0 {
                    ready.push(s);
                }
            }
        }
        let y = LuOperands::new(a);
        execute_in_order(&g, &y, &order, &Ctx::new(pol)).unwrap();
        prop_assert!(rel_error(&x.l.to_dense(), &y.l.to_dense()) <= 1e-12);
        prop_assert!(rel_error(&x.u.to_dense(), &y.u.to_dense()) <= 1e-12);
    }
}
