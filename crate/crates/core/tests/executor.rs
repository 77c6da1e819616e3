mod common;

use common::one_d;
use hmat_dag::accumulator::{hlu_accu, AccumulatorMap};
use hmat_dag::arith::{hlu, lu_residual};
use hmat_dag::executor::*;
use hmat_dag::hmatrix::{rel_error, Ctx, HMatrix, TruncationPolicy};
use hmat_dag::problems::{Problem, ProblemKind};
use hmat_dag::taskgraph::*;
use hmat_dag::Error;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const EXACT: TruncationPolicy = TruncationPolicy::Exact;

fn operands(p: &Problem, policy: TruncationPolicy) -> LuOperands {
    LuOperands::new(HMatrix::assemble(p.blocks.clone(), p.kernel(), policy))
}

fn reference(p: &Problem, mode: Mode, policy: TruncationPolicy) -> LuOperands {
    let ops = operands(p, policy);
    let ctx = Ctx::new(policy);
    if mode == Mode::Std {
        hlu(&ops.a, &ops.l, &ops.u, p.blocks.root(), &ctx).unwrap();
    } else {
        let accs = AccumulatorMap::new(p.blocks.clone());
        hlu_accu(&ops.a, &ops.l, &ops.u, p.blocks.root(), &accs, &ctx).unwrap();
        assert!(accs.is_empty());
    }
    ops
}

fn factor_error(x: &LuOperands, y: &LuOperands) -> f64 {
    rel_error(&x.l.to_dense(), &y.l.to_dense()).max(rel_error(&x.u.to_dense(), &y.u.to_dense()))
}

#[test]
fn empty_graph_reports_no_tasks() {
    let p = one_d(64, 32);
    let g = TaskGraph::new(Mode::Std, vec![], vec![]);
    let rep = execute(&g, &operands(&p, EXACT), 2, &Ctx::new(EXACT)).unwrap();
    assert_eq!(rep.tasks, 0);
    assert_eq!(rep.truncations, 0);
}

#[test]
fn single_node_graph_factors_a_leaf() {
    let p = one_d(16, 32);
    let g = compute_dag(&p.blocks, &DagConfig::new(Mode::Std)).unwrap();
    assert_eq!(g.len(), 1);
    let ops = operands(&p, EXACT);
    execute_sequential(&g, &ops, &Ctx::new(EXACT)).unwrap();
    assert!(factor_error(&ops, &reference(&p, Mode::Std, EXACT)) <= 1e-14);
}

#[test]
fn std_graph_reproduces_recursive_factors() {
    let p = one_d(512, 32);
    let g = compute_dag(&p.blocks, &DagConfig::new(Mode::Std)).unwrap();
    let r = reference(&p, Mode::Std, EXACT);
    for w in [1, 8] {
        let ops = operands(&p, EXACT);
        let rep = execute(&g, &ops, w, &Ctx::new(EXACT)).unwrap();
        assert_eq!(rep.tasks, g.len());
        assert!(factor_error(&ops, &r) <= 1e-11);
    }
}

#[test]
fn accumulator_graphs_reproduce_accumulator_factors() {
    let p = one_d(512, 32);
    for cfg in [
        DagConfig::new(Mode::AccuCombined),
        DagConfig::new(Mode::AccuMerged),
        DagConfig::new(Mode::AccuMerged).sparsified(),
    ] {
        let g = compute_dag(&p.blocks, &cfg).unwrap();
        let ops = operands(&p, EXACT);
        execute_sequential(&g, &ops, &Ctx::new(EXACT)).unwrap();
        assert!(factor_error(&ops, &reference(&p, cfg.mode, EXACT)) <= 1e-11, "{}", cfg.mode);
    }
}

#[test]
fn stop_size_graphs_run_recursive_tasks() {
    let p = one_d(512, 32);
    for mode in [Mode::Std, Mode::AccuCombined, Mode::AccuMerged] {
        let mut cfg = DagConfig::new(mode);
        cfg.stop_size = 128;
        let g = compute_dag(&p.blocks, &cfg).unwrap();
        let ops = operands(&p, EXACT);
        execute(&g, &ops, 4, &Ctx::new(EXACT)).unwrap();
        assert!(factor_error(&ops, &reference(&p, mode, EXACT)) <= 1e-11, "{mode}");
    }
}

/// A topological order choosing uniformly among the ready tasks.
fn random_order(g: &TaskGraph, seed: u64) -> Vec<u32> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut indeg = g.in_degrees();
    let mut ready: Vec<u32> = (0..g.len() as u32).filter(|&i| indeg[i as usize] == 0).collect();
    let mut order = Vec::new();
    while !ready.is_empty() {
        let v = ready.swap_remove(rng.random_range(0..ready.len()));
        order.push(v);
        for &s in g.successors(v as usize) {
            indeg[s as usize] -= 1;
            if indeg[s as usize] == 0 {
                ready.push(s);
            }
        }
    }
    order
}

#[test]
fn different_topological_orders_agree() {
    let p = Problem::new(ProblemKind::Sphere, 1024, 0.5).unwrap();
    let g = compute_dag(&p.blocks, &DagConfig::new(Mode::Std).sparsified()).unwrap();
    let a = operands(&p, EXACT);
    execute_sequential(&g, &a, &Ctx::new(EXACT)).unwrap();
    let b = operands(&p, EXACT);
    let order = random_order(&g, 7);
    assert_ne!(order, g.depth_order().unwrap());
    execute_in_order(&g, &b, &order, &Ctx::new(EXACT)).unwrap();
    assert!(factor_error(&a, &b) <= 1e-12);
}

#[test]
fn invalid_orders_are_rejected() {
    let p = one_d(64, 32);
    let g = compute_dag(&p.blocks, &DagConfig::new(Mode::Std)).unwrap();
    let ops = operands(&p, EXACT);
    let ctx = Ctx::new(EXACT);
    assert!(execute_in_order(&g, &ops, &[4, 3, 2, 1, 0], &ctx).is_err());
    assert!(execute_in_order(&g, &ops, &[0, 1, 2], &ctx).is_err());
    assert!(execute(&g, &ops, 0, &ctx).is_err());
}

#[test]
fn edges_are_respected_in_time() {
    let p = Problem::new(ProblemKind::Sphere, 1024, 0.5).unwrap();
    for mode in [Mode::Std, Mode::AccuMerged] {
        let g = compute_dag(&p.blocks, &DagConfig::new(mode).sparsified()).unwrap();
        let ops = operands(&p, TruncationPolicy::FixedAccuracy(1e-6));
        let opts = ExecOptions { workers: 4, record_times: true };
        let rep = execute_with(&g, &ops, &opts, &Ctx::new(TruncationPolicy::FixedAccuracy(1e-6))).unwrap();
        let times = rep.times.unwrap();
        assert_eq!(rep.tasks, g.len());
        for (a, b) in g.edges() {
            assert!(times[a as usize].1 <= times[b as usize].0, "{mode}: {a} -> {b}");
        }
    }
}

#[test]
fn cycle_is_a_deadlock() {
    let p = one_d(64, 32);
    let g = compute_dag(&p.blocks, &DagConfig::new(Mode::Std)).unwrap();
    let mut edges: Vec<_> = g.edges().collect();
    edges.push((4, 0));
    let cyclic = TaskGraph::new(Mode::Std, g.nodes().to_vec(), edges);
    let err = execute(&cyclic, &operands(&p, EXACT), 2, &Ctx::new(EXACT)).unwrap_err();
    assert_eq!(err, Error::Deadlock { remaining: 5 });
    assert!(execute_sequential(&cyclic, &operands(&p, EXACT), &Ctx::new(EXACT)).is_err());
}

#[test]
fn singular_pivot_propagates() {
    let p = one_d(128, 32);
    let g = compute_dag(&p.blocks, &DagConfig::new(Mode::Std)).unwrap();
    let ops = LuOperands::new(HMatrix::zeros(p.blocks.clone(), EXACT));
    let err = execute(&g, &ops, 2, &Ctx::new(EXACT)).unwrap_err();
    assert!(matches!(err, Error::SingularPivot { .. }), "{err:?}");
}

#[test]
fn truncated_runs_meet_the_residual_bound() {
    let eps = 1e-6;
    let pol = TruncationPolicy::FixedAccuracy(eps);
    let p = Problem::new(ProblemKind::Sphere, 1024, 0.5).unwrap();
    let a = operands(&p, pol).a;
    for mode in [Mode::Std, Mode::AccuCombined, Mode::AccuMerged] {
        let g = compute_dag(&p.blocks, &DagConfig::new(mode)).unwrap();
        let ops = LuOperands::new(a.clone());
        let rep = execute(&g, &ops, 3, &Ctx::new(pol)).unwrap();
        assert!(rep.truncations > 0);
        assert!(lu_residual(&a, &ops.l, &ops.u) <= 100.0 * eps, "{mode}");
    }
}

#[test]
fn report_row_matches_header() {
    let rep = ExecReport {
        n: 512,
        mode: Mode::Std,
        workers: 4,
        exec_ms: 1.25,
        tasks: 248,
        truncations: 130,
        times: None,
    };
    assert_eq!(ExecReport::CSV_HEADER, "n,mode,workers,exec_ms,tasks,truncations");
    assert_eq!(rep.to_csv_row(), "512,std,4,1.250,248,130");
}
