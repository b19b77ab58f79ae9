//! Expected executions per basic block.
//!
//! Each block satisfies `F_b = sum_p F_p * P(p, b)` over its predecessors,
//! with an extra `+1` on the entry block. Back edges into components that can
//! never halt are dropped first so that the system has a unique solution.

use std::collections::{BTreeMap, BTreeSet};

use crate::cfg::{BlockId, ControlFlowGraph, Edge};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    weights: BTreeMap<BlockId, f64>,
    pruned_edges: BTreeSet<(BlockId, BlockId)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WeightError {
    #[error("execution-frequency system is singular; offending component: {component:?}")]
    Singular { component: Vec<BlockId> },
    #[error("solution residual {residual:e} exceeds tolerance")]
    Residual { residual: f64 },
    #[error("weights are empty or sum to zero")]
    ZeroTotal,
}

impl BlockWeights {
    pub fn new(weights: BTreeMap<BlockId, f64>) -> Self {
        Self {
            weights,
            pruned_edges: BTreeSet::new(),
        }
    }

    /// Every block weighted 1.
    pub fn uniform(cfg: &ControlFlowGraph) -> Self {
        Self::new(cfg.block_ids().map(|b| (b, 1.0)).collect())
    }

    pub fn get(&self, b: BlockId) -> Option<f64> {
        self.weights.get(&b).copied()
    }

    pub fn insert(&mut self, b: BlockId, w: f64) {
        self.weights.insert(b, w);
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockId, f64)> + '_ {
        self.weights.iter().map(|(&b, &w)| (b, w))
    }

    pub fn as_map(&self) -> &BTreeMap<BlockId, f64> {
        &self.weights
    }

    pub fn pruned_edges(&self) -> &BTreeSet<(BlockId, BlockId)> {
        &self.pruned_edges
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }
}

/// Blocks reachable from the entry through edges of positive probability.
fn live_blocks(cfg: &ControlFlowGraph) -> BTreeSet<BlockId> {
    let mut seen = BTreeSet::from([cfg.entry()]);
    let mut stack = vec![cfg.entry()];
    while let Some(b) = stack.pop() {
        for e in cfg.successors(b) {
            if e.probability > 0.0 && seen.insert(e.to) {
                stack.push(e.to);
            }
        }
    }
    seen
}

/// Blocks with a positive-probability path to a `HALT`.
fn can_halt(cfg: &ControlFlowGraph) -> BTreeSet<BlockId> {
    let edges: Vec<Edge> = cfg
        .edges()
        .into_iter()
        .filter(|e| e.probability > 0.0)
        .collect();
    let mut seen = cfg.exit_blocks();
    let mut changed = true;
    while changed {
        changed = false;
        for e in &edges {
            if seen.contains(&e.to) && seen.insert(e.from) {
                changed = true;
            }
        }
    }
    seen
}

/// Back edges of a depth-first traversal from the entry, visiting successors
/// in id order. Only positive-probability edges are followed.
fn back_edges(cfg: &ControlFlowGraph) -> BTreeSet<(BlockId, BlockId)> {
    let succs = |b: BlockId| -> Vec<BlockId> {
        let mut s: Vec<BlockId> = cfg
            .successors(b)
            .into_iter()
            .filter(|e| e.probability > 0.0)
            .map(|e| e.to)
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let mut back = BTreeSet::new();
    let mut visited = BTreeSet::from([cfg.entry()]);
    let mut on_stack = BTreeSet::from([cfg.entry()]);
    let mut stack: Vec<(BlockId, Vec<BlockId>, usize)> = vec![(cfg.entry(), succs(cfg.entry()), 0)];
    while let Some((node, children, next)) = stack.last_mut() {
        if let Some(&child) = children.get(*next) {
            *next += 1;
            let node = *node;
            if on_stack.contains(&child) {
                back.insert((node, child));
            } else if visited.insert(child) {
                on_stack.insert(child);
                stack.push((child, succs(child), 0));
            }
        } else {
            on_stack.remove(node);
            stack.pop();
        }
    }
    back
}

/// Marks back edges whose target can never reach a `HALT` as suppressed for
/// weighting. The control flow itself is unchanged.
pub fn prune_infinite_loops(cfg: &ControlFlowGraph) -> ControlFlowGraph {
    let halting = can_halt(cfg);
    let pruned: BTreeSet<(BlockId, BlockId)> = back_edges(cfg)
        .into_iter()
        .filter(|(_, to)| !halting.contains(to))
        .collect();
    let mut out = cfg.clone();
    out.set_suppressed(pruned);
    out
}

/// Solves the expected-execution system by dense Gaussian elimination with
/// partial pivoting. Blocks not reachable through positive-probability edges
/// get weight 0.
pub fn expected_executions(cfg: &ControlFlowGraph) -> Result<BlockWeights, WeightError> {
    let live: Vec<BlockId> = live_blocks(cfg).into_iter().collect();
    let index: BTreeMap<BlockId, usize> = live.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let n = live.len();

    // A = I - P^T restricted to live blocks; rhs has the entry's +1.
    let mut a = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    rhs[index[&cfg.entry()]] = 1.0;
    let edges: Vec<Edge> = cfg
        .flow_edges()
        .into_iter()
        .filter(|e| index.contains_key(&e.from) && index.contains_key(&e.to))
        .collect();
    for e in &edges {
        a[index[&e.to]][index[&e.from]] -= e.probability;
    }

    let solution = solve_dense(a.clone(), rhs.clone()).map_err(|col| WeightError::Singular {
        component: component_of(live[col], &live, &edges),
    })?;

    let scale = solution.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let residual = a
        .iter()
        .zip(&rhs)
        .map(|(row, b)| (row.iter().zip(&solution).map(|(x, y)| x * y).sum::<f64>() - b).abs())
        .fold(0.0, f64::max);
    if !(residual <= 1e-9 * scale) {
        return Err(WeightError::Residual { residual });
    }

    let mut weights: BTreeMap<BlockId, f64> = cfg.block_ids().map(|b| (b, 0.0)).collect();
    for (b, f) in live.iter().zip(solution) {
        // Clamp round-off below zero.
        weights.insert(*b, f.max(0.0));
    }
    Ok(BlockWeights {
        weights,
        pruned_edges: cfg.suppressed_edges().clone(),
    })
}

/// Convenience: prune, then solve.
pub fn block_weights(cfg: &ControlFlowGraph) -> Result<BlockWeights, WeightError> {
    expected_executions(&prune_infinite_loops(cfg))
}

/// Weights divided by their sum.
pub fn normalized_weights(w: &BlockWeights) -> Result<BTreeMap<BlockId, f64>, WeightError> {
    let total = w.total();
    if w.weights.is_empty() || !(total > 0.0) {
        return Err(WeightError::ZeroTotal);
    }
    Ok(w.weights.iter().map(|(&b, &x)| (b, x / total)).collect())
}

/// Gaussian elimination with partial pivoting. On a (numerically) zero
/// pivot, returns the column index where elimination broke down.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, usize> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty pivot range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(col);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Strongly connected component (over flow edges) containing `b`.
fn component_of(b: BlockId, live: &[BlockId], edges: &[Edge]) -> Vec<BlockId> {
    let reach = |start: BlockId, forward: bool| {
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            for e in edges {
                let (from, to) = if forward { (e.from, e.to) } else { (e.to, e.from) };
                if from == x && seen.insert(to) {
                    stack.push(to);
                }
            }
        }
        seen
    };
    let fwd = reach(b, true);
    let bwd = reach(b, false);
    live.iter()
        .copied()
        .filter(|x| fwd.contains(x) && bwd.contains(x))
        .collect()
}
