//! Control-flow-aware qubit allocation for a Quil subset.
//!
//! The pipeline: parse a program ([`frontend`]), build its control flow
//! graph ([`cfg`]), estimate how often each block runs ([`weights`]),
//! compute dominators ([`dominators`]) and map logical qubits onto a
//! device coupling graph ([`device`], [`allocator`]). The [`simulator`]
//! and [`metrics`] modules evaluate the result.

pub mod allocator;
pub mod cfg;
pub mod device;
pub mod dominators;
pub mod frontend;
pub mod metrics;
pub mod seed;
pub mod simulator;
pub mod weights;

pub use allocator::{allocate, allocate_cf_unaware, AllocConfig, AllocError, AllocatedProgram, Allocation};
pub use cfg::{build_cfg, BlockId, ControlFlowGraph};
pub use device::{load_device, DeviceGraph};
pub use dominators::{compute_dominators, DominatorTree};
pub use frontend::{emit_program, parse_program, Program};
pub use metrics::{r_squared, sso, Histogram};
pub use simulator::{SimResult, Simulator};
pub use weights::{block_weights, BlockWeights};
