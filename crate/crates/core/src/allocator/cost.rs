use std::collections::BTreeMap;

use super::{AllocError, AllocatedProgram};
use crate::cfg::{BlockId, ControlFlowGraph};
use crate::device::DeviceGraph;
use crate::frontend::{GateKind, Instruction};
use crate::weights::BlockWeights;

/// `-ln f` of one physical instruction. SWAPs count as three CZs on their
/// edge; control instructions are free.
pub fn instruction_cost(instr: &Instruction, device: &DeviceGraph) -> Result<f64, AllocError> {
    let on_device = |q| {
        if device.contains(q) {
            Ok(())
        } else {
            Err(AllocError::UnknownPhysical(q))
        }
    };
    match instr {
        Instruction::Gate(g) => match g.kind {
            GateKind::Rx | GateKind::Rz => {
                on_device(g.qubits[0])?;
                Ok(-device.single_qubit_fidelity(g.qubits[0]).ln())
            }
            GateKind::Cz | GateKind::Swap => {
                let (a, b) = (g.qubits[0], g.qubits[1]);
                let f = device
                    .edge_fidelity(a, b)
                    .ok_or(AllocError::NonEdgeGate(a, b))?;
                let uses = if g.kind == GateKind::Swap { 3.0 } else { 1.0 };
                Ok(-uses * f.ln())
            }
        },
        Instruction::Measure { qubit, .. } => {
            on_device(*qubit)?;
            Ok(-device.readout_fidelity(*qubit).ln())
        }
        _ => Ok(0.0),
    }
}

/// Sum over blocks of `F_b * sum(-ln f(g))` for a physically addressed CFG.
pub fn allocation_cost(
    cfg: &ControlFlowGraph,
    weights: &BlockWeights,
    device: &DeviceGraph,
) -> Result<f64, AllocError> {
    let mut total = 0.0;
    for block in cfg.blocks() {
        let w = weights
            .get(block.id)
            .ok_or(AllocError::MissingWeight(block.id))?;
        let mut block_cost = 0.0;
        for instr in &block.instructions {
            block_cost += instruction_cost(instr, device)?;
        }
        total += w * block_cost;
    }
    Ok(total)
}

/// Extends weights of the original blocks to the trampolines of an output
/// CFG: a trampoline runs as often as the edge it sits on is taken.
pub(crate) fn extend_weights(
    out: &ControlFlowGraph,
    base: &BlockWeights,
    trampolines: &BTreeMap<BlockId, (BlockId, BlockId)>,
) -> Result<BlockWeights, AllocError> {
    let mut w = BlockWeights::new(BTreeMap::new());
    for id in out.block_ids() {
        if let Some(&(from, _)) = trampolines.get(&id) {
            let f_from = base.get(from).ok_or(AllocError::MissingWeight(from))?;
            let p: f64 = out
                .successors(from)
                .iter()
                .filter(|e| e.to == id)
                .map(|e| e.probability)
                .sum();
            w.insert(id, f_from * p);
        } else {
            w.insert(id, base.get(id).ok_or(AllocError::MissingWeight(id))?);
        }
    }
    Ok(w)
}

/// Cost of an allocated program under a different set of input weights,
/// e.g. scoring a uniform-weight allocation with the real expected
/// executions.
pub fn expected_cost(
    allocated: &AllocatedProgram,
    weights: &BlockWeights,
    device: &DeviceGraph,
) -> Result<f64, AllocError> {
    let w = extend_weights(&allocated.cfg, weights, &allocated.trampolines)?;
    allocation_cost(&allocated.cfg, &w, device)
}
