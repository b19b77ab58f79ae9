use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{AllocError, Allocation};
use crate::cfg::{BasicBlock, BlockId, ControlFlowGraph, Terminator};
use crate::dominators::DominatorTree;
use crate::frontend::{Gate, GateKind, Instruction, Qubit};

/// Edge -> SWAPs to run on it, in execution order.
pub type InverseSwapPlan = BTreeMap<(BlockId, BlockId), Vec<(Qubit, Qubit)>>;

/// Allocation in effect at each measurement, keyed by block and
/// instruction index.
pub type MeasureTrace = BTreeMap<(BlockId, usize), Allocation>;

/// Edges `(b1, b2)` on which the SWAPs of `b` must be undone: `b`
/// dominates `b1` but does not strictly dominate `b2`.
pub fn inverse_swap_edges(
    cfg: &ControlFlowGraph,
    tree: &DominatorTree,
    b: BlockId,
) -> BTreeSet<(BlockId, BlockId)> {
    cfg.edges()
        .into_iter()
        .filter(|e| {
            tree.dominates(b, e.from).unwrap_or(false)
                && !tree.strictly_dominates(b, e.to).unwrap_or(false)
        })
        .map(|e| (e.from, e.to))
        .collect()
}

/// For every edge, the blocks whose SWAPs are undone on it, innermost
/// (the edge's source) first.
pub(crate) fn inversion_blocks(
    cfg: &ControlFlowGraph,
    tree: &DominatorTree,
) -> BTreeMap<(BlockId, BlockId), Vec<BlockId>> {
    let mut out = BTreeMap::new();
    for e in cfg.edges() {
        let Ok(chain) = tree.dominator_chain(e.from) else {
            continue;
        };
        let blocks: Vec<BlockId> = chain
            .into_iter()
            .filter(|&b| !tree.strictly_dominates(b, e.to).unwrap_or(false))
            .collect();
        if !blocks.is_empty() {
            out.insert((e.from, e.to), blocks);
        }
    }
    out
}

/// Builds the inverse-SWAP sequence of every edge from the SWAPs each block
/// inserted. Each contributing block's SWAPs are reversed; blocks closest
/// to the edge come first.
pub fn plan_inverse_swaps(
    cfg: &ControlFlowGraph,
    tree: &DominatorTree,
    swaps: &BTreeMap<BlockId, Vec<(Qubit, Qubit)>>,
) -> InverseSwapPlan {
    let mut plan = InverseSwapPlan::new();
    for (edge, blocks) in inversion_blocks(cfg, tree) {
        let seq: Vec<(Qubit, Qubit)> = blocks
            .iter()
            .flat_map(|b| swaps.get(b).into_iter().flat_map(|s| s.iter().rev().copied()))
            .collect();
        if !seq.is_empty() {
            plan.insert(edge, seq);
        }
    }
    plan
}

/// Splits every planned edge with a trampoline block holding the inverse
/// SWAPs followed by a jump to the original target. Returns the new graph
/// and a map from trampoline to the edge it replaces.
pub fn insert_trampolines(
    cfg: &ControlFlowGraph,
    plan: &InverseSwapPlan,
) -> (ControlFlowGraph, BTreeMap<BlockId, (BlockId, BlockId)>) {
    let mut out = cfg.clone();
    let mut made = BTreeMap::new();
    let mut taken = BTreeSet::new();
    for (&(from, to), seq) in plan {
        if seq.is_empty() {
            continue;
        }
        let label = out.fresh_label(&format!("tramp_{}_{}", from.0, to.0), &taken);
        taken.insert(label.clone());
        let instrs = seq
            .iter()
            .map(|&(a, b)| Instruction::Gate(Gate::swap(a, b)))
            .collect();
        let t = out.add_block(Some(label), instrs, Terminator::Jump(to));
        out.block_mut(from)
            .expect("plan edges come from the graph")
            .terminator
            .retarget(to, t);
        made.insert(t, (from, to));
    }
    (out, made)
}

pub(crate) fn rewrite_block_measures<'a>(
    block: &mut BasicBlock,
    lookup: impl Fn(usize) -> Option<&'a Allocation>,
) -> Result<(), AllocError> {
    for (idx, instr) in block.instructions.iter_mut().enumerate() {
        if let Instruction::Measure { qubit, .. } = instr {
            let p = lookup(idx)
                .and_then(|a| a.physical(*qubit))
                .ok_or(AllocError::Unmapped(*qubit))?;
            *qubit = p;
        }
    }
    Ok(())
}

/// Rewrites each `MEASURE` to the physical qubit holding its logical qubit
/// at that point. Every measurement needs an entry in `trace`.
pub fn rewrite_measures(
    cfg: &ControlFlowGraph,
    trace: &MeasureTrace,
) -> Result<ControlFlowGraph, AllocError> {
    let mut out = cfg.clone();
    let ids: Vec<BlockId> = out.block_ids().collect();
    for id in ids {
        let block = out.block_mut(id).expect("id comes from the graph");
        rewrite_block_measures(block, |idx| trace.get(&(id, idx)))?;
    }
    Ok(out)
}

/// Position -> token permutation, fixed points omitted.
type Permutation = BTreeMap<Qubit, Qubit>;

fn apply_swap(perm: &mut Permutation, a: Qubit, b: Qubit) {
    let ta = perm.remove(&a).unwrap_or(a);
    let tb = perm.remove(&b).unwrap_or(b);
    if tb != a {
        perm.insert(a, tb);
    }
    if ta != b {
        perm.insert(b, ta);
    }
}

/// Checks that the net SWAP permutation on entry to every block is the
/// same along all incoming paths. Returns the edges that disagree with the
/// first permutation seen for their target.
pub fn routing_invariant_violations(cfg: &ControlFlowGraph) -> Vec<(BlockId, BlockId)> {
    let mut incoming: BTreeMap<BlockId, Permutation> = BTreeMap::new();
    incoming.insert(cfg.entry(), Permutation::new());
    let mut queue = VecDeque::from([cfg.entry()]);
    let mut done = BTreeSet::new();
    let mut bad = BTreeSet::new();
    while let Some(b) = queue.pop_front() {
        if !done.insert(b) {
            continue;
        }
        let mut perm = incoming[&b].clone();
        for instr in &cfg.block(b).expect("queued blocks exist").instructions {
            if let Instruction::Gate(g) = instr {
                if g.kind == GateKind::Swap {
                    apply_swap(&mut perm, g.qubits[0], g.qubits[1]);
                }
            }
        }
        for s in cfg.successor_ids(b) {
            match incoming.get(&s) {
                Some(existing) => {
                    if *existing != perm {
                        bad.insert((b, s));
                    }
                }
                None => {
                    incoming.insert(s, perm.clone());
                }
            }
            queue.push_back(s);
        }
    }
    bad.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::build_cfg;
    use crate::dominators::compute_dominators;
    use crate::frontend::parse_program;

    const DIAMOND: &str = "DECLARE ro BIT\nMEASURE 0 ro[0]\nJUMP-WHEN @R ro[0]\nCZ 0 1\nJUMP @M\n\
                           LABEL @R\nRX(pi) 1\nLABEL @M\nHALT";

    fn graph(src: &str) -> ControlFlowGraph {
        build_cfg(&parse_program(src).unwrap()).unwrap()
    }

    #[test]
    fn diamond_arm_inverts_on_exit_edge() {
        let g = graph(DIAMOND);
        let t = compute_dominators(&g);
        // b1 (left arm) dominates only itself; its out-edge goes to the join.
        assert_eq!(
            inverse_swap_edges(&g, &t, BlockId(1)),
            BTreeSet::from([(BlockId(1), BlockId(3))])
        );
        // The entry strictly dominates every other block, so nothing to undo.
        assert!(inverse_swap_edges(&g, &t, BlockId(0)).is_empty());
    }

    #[test]
    fn loop_header_inverts_on_back_edge() {
        let g = graph(
            "DECLARE ro BIT\nLABEL @H\nCZ 0 1\nMEASURE 0 ro[0]\nJUMP-WHEN @X ro[0]\n\
             RX(pi) 1\nJUMP @H\nLABEL @X\nHALT",
        );
        let t = compute_dominators(&g);
        let e = inverse_swap_edges(&g, &t, BlockId(0));
        assert_eq!(e, BTreeSet::from([(BlockId(1), BlockId(0))]));
        let blocks = inversion_blocks(&g, &t);
        assert_eq!(blocks[&(BlockId(1), BlockId(0))], vec![BlockId(1), BlockId(0)]);

        let swaps = BTreeMap::from([(BlockId(0), vec![(0, 1), (1, 2)]), (BlockId(1), vec![(5, 6)])]);
        let plan = plan_inverse_swaps(&g, &t, &swaps);
        assert_eq!(plan[&(BlockId(1), BlockId(0))], vec![(5, 6), (1, 2), (0, 1)]);
        assert_eq!(plan.len(), 1);
    }

    #[test]
    fn trampolines_split_edges() {
        let g = graph(DIAMOND);
        let plan = InverseSwapPlan::from([((BlockId(1), BlockId(3)), vec![(0, 1)])]);
        let (out, made) = insert_trampolines(&g, &plan);
        assert_eq!(made.len(), 1);
        let (&t, &edge) = made.iter().next().unwrap();
        assert_eq!(edge, (BlockId(1), BlockId(3)));
        assert_eq!(out.successor_ids(BlockId(1)), vec![t]);
        assert_eq!(out.successor_ids(t), vec![BlockId(3)]);
        assert_eq!(out.block(t).unwrap().label.as_deref(), Some("tramp_1_3"));
        assert!(out.to_program().is_ok());
    }

    #[test]
    fn measures_follow_trace() {
        let g = graph("DECLARE ro BIT[2]\nMEASURE 0 ro[0]\nMEASURE 1 ro[1]\nHALT");
        let a = Allocation::from_pairs([(0, 4), (1, 5)]).unwrap();
        let b = Allocation::from_pairs([(0, 5), (1, 4)]).unwrap();
        let trace = MeasureTrace::from([((BlockId(0), 0), a), ((BlockId(0), 1), b)]);
        let out = rewrite_measures(&g, &trace).unwrap();
        let qs: Vec<Qubit> = out.block(BlockId(0)).unwrap().instructions.iter().map(|i| i.qubits()[0]).collect();
        assert_eq!(qs, vec![4, 4]);

        let partial = MeasureTrace::from([((BlockId(0), 0), Allocation::new())]);
        assert!(matches!(rewrite_measures(&g, &partial), Err(AllocError::Unmapped(0))));
    }

    #[test]
    fn invariant_detects_unbalanced_arm() {
        let g = graph(
            "DECLARE ro BIT\nMEASURE 0 ro[0]\nJUMP-WHEN @R ro[0]\nSWAP 0 1\nJUMP @M\n\
             LABEL @R\nRX(pi) 1\nLABEL @M\nHALT",
        );
        assert_eq!(routing_invariant_violations(&g), vec![(BlockId(1), BlockId(3))]);
        let balanced = graph(
            "DECLARE ro BIT\nMEASURE 0 ro[0]\nJUMP-WHEN @R ro[0]\nSWAP 0 1\nSWAP 1 0\nJUMP @M\n\
             LABEL @R\nRX(pi) 1\nLABEL @M\nHALT",
        );
        assert!(routing_invariant_violations(&balanced).is_empty());
    }

    #[test]
    fn swap_permutation_composition() {
        let mut p = Permutation::new();
        apply_swap(&mut p, 0, 1);
        apply_swap(&mut p, 1, 2);
        assert_eq!(p, Permutation::from([(0, 1), (1, 2), (2, 0)]));
        apply_swap(&mut p, 1, 2);
        apply_swap(&mut p, 0, 1);
        assert!(p.is_empty());
    }
}
