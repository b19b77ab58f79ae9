//! Control-flow-aware qubit allocation.
//!
//! Given a dead-code-free CFG, its expected block executions and a device,
//! the allocator searches over entry mappings (simulated annealing followed
//! by a steepest-descent polish). Each candidate mapping is scored by fully
//! routing the program: blocks are routed lazily in reverse postorder, each
//! block starting from the mapping its immediate dominator left behind, and
//! inverse SWAPs are placed on the edges where a block's SWAPs stop being
//! guaranteed to have run. The score is the execution-weighted sum of
//! `-ln(fidelity)` over every emitted gate.

mod anneal;
mod cost;
mod route;
mod trampoline;

use std::collections::{BTreeMap, BTreeSet};

use crate::cfg::{BlockId, CfgError, ControlFlowGraph};
use crate::device::{DeviceError, DeviceGraph};
use crate::frontend::{emit_program, Program, Qubit};
use crate::weights::BlockWeights;

pub use cost::{allocation_cost, expected_cost, instruction_cost};
pub use route::{lazy_route_block, RoutedBlock};
pub use trampoline::{
    insert_trampolines, inverse_swap_edges, plan_inverse_swaps, rewrite_measures,
    routing_invariant_violations, InverseSwapPlan, MeasureTrace,
};

pub(crate) use anneal::Problem;

/// Logical-to-physical qubit assignment, injective on its domain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Allocation {
    map: BTreeMap<Qubit, Qubit>,
}

impl Allocation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Qubit, Qubit)>) -> Result<Self, AllocError> {
        let mut a = Self::new();
        for (l, p) in pairs {
            a.bind(l, p)?;
        }
        Ok(a)
    }

    /// Binds a logical qubit. Rebinding a logical or reusing a physical
    /// qubit is an error.
    pub fn bind(&mut self, logical: Qubit, physical: Qubit) -> Result<(), AllocError> {
        if self.map.contains_key(&logical) || self.logical_at(physical).is_some() {
            return Err(AllocError::NotInjective { logical, physical });
        }
        self.map.insert(logical, physical);
        Ok(())
    }

    pub fn physical(&self, logical: Qubit) -> Option<Qubit> {
        self.map.get(&logical).copied()
    }

    pub fn logical_at(&self, physical: Qubit) -> Option<Qubit> {
        self.map
            .iter()
            .find_map(|(&l, &p)| (p == physical).then_some(l))
    }

    /// Exchanges whatever sits on the two physical qubits.
    pub fn apply_swap(&mut self, a: Qubit, b: Qubit) {
        for p in self.map.values_mut() {
            if *p == a {
                *p = b;
            } else if *p == b {
                *p = a;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Qubit, Qubit)> + '_ {
        self.map.iter().map(|(&l, &p)| (l, p))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, logical: Qubit) -> bool {
        self.map.contains_key(&logical)
    }
}

/// A SWAP inserted by routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SwapOp {
    pub block: BlockId,
    /// Index of the SWAP within the routed block's instructions.
    pub position: usize,
    pub pair: (Qubit, Qubit),
}

#[derive(Debug, Clone)]
pub struct AllocConfig {
    pub seed: u64,
    pub iterations: usize,
    pub restarts: usize,
    pub initial_temperature: f64,
    pub cooling: f64,
}

impl Default for AllocConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 20_000,
            restarts: 4,
            initial_temperature: 10.0,
            cooling: 0.995,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AllocError {
    #[error("device too small: {logical} logical qubits, {physical} physical qubits")]
    DeviceTooSmall { logical: usize, physical: usize },
    #[error("allocation not injective at logical {logical} -> physical {physical}")]
    NotInjective { logical: Qubit, physical: Qubit },
    #[error("logical qubit {0} is not mapped at this program point")]
    Unmapped(Qubit),
    #[error("two-qubit gate on ({0}, {1}), which is not a device edge")]
    NonEdgeGate(Qubit, Qubit),
    #[error("physical qubit {0} is not on the device")]
    UnknownPhysical(Qubit),
    #[error("no weight for block {0}")]
    MissingWeight(BlockId),
    #[error("the CFG contains blocks unreachable from the entry; run dead-code elimination first")]
    UnreachableBlocks,
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Result of allocation: the rewritten physical program plus bookkeeping.
#[derive(Debug, Clone)]
pub struct AllocatedProgram {
    pub cfg: ControlFlowGraph,
    pub program: Program,
    pub entry_mapping: Allocation,
    /// Weighted cost under the weights the allocation optimized for.
    pub cost: f64,
    /// Weights used for `cost`, extended to trampoline blocks.
    pub weights: BlockWeights,
    /// Trampoline block -> the original edge it sits on.
    pub trampolines: BTreeMap<BlockId, (BlockId, BlockId)>,
    pub swaps: Vec<SwapOp>,
}

impl AllocatedProgram {
    pub fn emit(&self) -> String {
        emit_program(&self.program)
    }

    /// Static number of SWAP instructions in the output, trampolines included.
    pub fn swap_count(&self) -> usize {
        self.cfg
            .blocks()
            .flat_map(|b| &b.instructions)
            .filter(|i| {
                matches!(i, crate::frontend::Instruction::Gate(g)
                    if g.kind == crate::frontend::GateKind::Swap)
            })
            .count()
    }

    pub fn trampoline_ids(&self) -> BTreeSet<BlockId> {
        self.trampolines.keys().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SwapMode {
    /// SWAPs persist; inverses go on dominance-exit edges.
    Lazy,
    /// Every SWAP chain is undone right after the gate it enables.
    Eager,
}

/// Control-flow-aware allocation: real block weights, lazy SWAPs,
/// dominator-placed inverse SWAPs.
pub fn allocate(
    cfg: &ControlFlowGraph,
    weights: &BlockWeights,
    device: &DeviceGraph,
    config: &AllocConfig,
) -> Result<AllocatedProgram, AllocError> {
    let problem = Problem::new(cfg, weights, device, SwapMode::Lazy)?;
    let best = problem.anneal(config);
    problem.materialize(&best)
}

/// Baseline: uniform block weights and eager inverse SWAPs.
pub fn allocate_cf_unaware(
    cfg: &ControlFlowGraph,
    device: &DeviceGraph,
    config: &AllocConfig,
) -> Result<AllocatedProgram, AllocError> {
    let uniform = BlockWeights::uniform(cfg);
    let problem = Problem::new(cfg, &uniform, device, SwapMode::Eager)?;
    let best = problem.anneal(config);
    problem.materialize(&best)
}

/// Routes and scores a fixed entry mapping with the control-flow-aware
/// pipeline. Every logical qubit of the program must be mapped.
pub fn route_with_mapping(
    cfg: &ControlFlowGraph,
    weights: &BlockWeights,
    device: &DeviceGraph,
    entry: &Allocation,
) -> Result<AllocatedProgram, AllocError> {
    let problem = Problem::new(cfg, weights, device, SwapMode::Lazy)?;
    let layout = problem.layout_from(entry)?;
    problem.materialize(&layout)
}

/// Same as [`route_with_mapping`] for the eager, uniform-weight baseline.
pub fn route_with_mapping_cf_unaware(
    cfg: &ControlFlowGraph,
    device: &DeviceGraph,
    entry: &Allocation,
) -> Result<AllocatedProgram, AllocError> {
    let uniform = BlockWeights::uniform(cfg);
    let problem = Problem::new(cfg, &uniform, device, SwapMode::Eager)?;
    let layout = problem.layout_from(entry)?;
    problem.materialize(&layout)
}

/// Logical qubits used anywhere in the CFG, sorted.
pub fn logical_qubits(cfg: &ControlFlowGraph) -> Vec<Qubit> {
    let set: BTreeSet<Qubit> = cfg
        .blocks()
        .flat_map(|b| b.instructions.iter().flat_map(|i| i.qubits().iter().copied()))
        .collect();
    set.into_iter().collect()
}
