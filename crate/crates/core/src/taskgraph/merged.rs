//! Merged accumulator graphs: the shift/apply graph over the block tree is
//! built first, the arithmetic graph is then linked to it by explicit edges.

use super::build::{refine_graph, DagConfig};
use super::task::{DepTable, Mat, Mode, Operand, Refiner, Seq, Task, TaskKind};
use super::TaskGraph;
use crate::error::{Error, Result};
use crate::trees::{BlockId, BlockTree};

/// Shift tasks for refinable blocks, apply tasks for the first blocks that
/// are not refined, with an edge from each shift to the tasks of its sons.
/// Returns tasks in sequence order with edges and the per-block task index.
pub(crate) fn accumulator_graph(
    tree: &BlockTree,
    refiner: &Refiner<'_>,
) -> (Vec<Task>, Vec<(u32, u32)>, Vec<u32>) {
    let mut tasks = Vec::new();
    let mut edges = Vec::new();
    let mut index = vec![u32::MAX; tree.len()];
    let mut stack: Vec<(BlockId, Seq, Option<u32>)> = vec![(tree.root(), Seq::root(2), None)];
    while let Some((b, seq, parent)) = stack.pop() {
        let id = tasks.len() as u32;
        index[b.index()] = id;
        if let Some(p) = parent {
            edges.push((p, id));
        }
        let op = [Operand::new(Mat::A, b)];
        if refiner.block_refinable(b) {
            tasks.push(Task::new(TaskKind::ShiftUpd, DepTable::Merged, &op, seq));
            let sons = &tree.node(b).children;
            for (k, &c) in sons.iter().enumerate().rev() {
                stack.push((c, seq.child(k), Some(id)));
            }
        } else {
            tasks.push(Task::new(TaskKind::ApplyUpd, DepTable::Merged, &op, seq));
        }
    }
    (tasks, edges, index)
}

pub(crate) fn build_merged(tree: &BlockTree, cfg: &DagConfig, parallel: bool) -> Result<TaskGraph> {
    let refiner = Refiner::new(tree, Mode::AccuMerged, cfg.stop_size);
    let (accu, accu_edges, apply_of) = accumulator_graph(tree, &refiner);
    let root = Task::root_lu(tree, Mode::AccuMerged);
    let (mut tasks, mut edges) = refine_graph(tree, root, refiner, cfg, parallel)?;
    let offset = tasks.len() as u32;
    let apply = |b: BlockId| -> Result<u32> {
        match apply_of[b.index()] {
            u32::MAX => Err(Error::NotRefinable(format!("no accumulator task for block {b}"))),
            i => Ok(offset + i),
        }
    };
    let mut cross = Vec::new();
    for (i, t) in tasks.iter().enumerate() {
        let i = i as u32;
        match t.kind {
            TaskKind::AddUpd => cross.push((i, apply(t.target().block)?)),
            TaskKind::LeafFactor
            | TaskKind::LeafSolveL
            | TaskKind::LeafSolveU
            | TaskKind::Hlu
            | TaskKind::Htrsl
            | TaskKind::Htrsu => cross.push((apply(t.target().block)?, i)),
            _ => {}
        }
    }
    tasks.extend(accu);
    edges.extend(accu_edges.into_iter().map(|(a, b)| (a + offset, b + offset)));
    edges.extend(cross);
    let g = TaskGraph::checked(Mode::AccuMerged, tasks, edges)?;
    if !cfg.sparsify {
        return Ok(g);
    }
    // Stitching creates redundant edges whose alternative paths pass through
    // the accumulator tasks and are too long for the local search.
    Ok(g.transitive_reduction().expect("checked acyclic"))
}
