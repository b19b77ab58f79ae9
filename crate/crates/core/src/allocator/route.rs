use std::collections::BTreeMap;

use super::trampoline::rewrite_block_measures;
use super::{AllocError, Allocation, SwapMode, SwapOp};
use crate::cfg::BasicBlock;
use crate::device::DeviceGraph;
use crate::frontend::{Gate, Instruction, Qubit};

pub(crate) const UNBOUND: usize = usize::MAX;

/// Dense logical <-> dense physical assignment used on the hot path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub l2p: Vec<usize>,
    pub p2l: Vec<usize>,
}

impl Layout {
    pub fn new(logicals: usize, physicals: usize) -> Self {
        Self {
            l2p: vec![UNBOUND; logicals],
            p2l: vec![UNBOUND; physicals],
        }
    }

    pub fn bind(&mut self, l: usize, p: usize) {
        debug_assert_eq!(self.l2p[l], UNBOUND);
        debug_assert_eq!(self.p2l[p], UNBOUND);
        self.l2p[l] = p;
        self.p2l[p] = l;
    }

    /// Exchanges the contents of two physical positions.
    pub fn swap(&mut self, a: usize, b: usize) {
        let (la, lb) = (self.p2l[a], self.p2l[b]);
        self.p2l[a] = lb;
        self.p2l[b] = la;
        if la != UNBOUND {
            self.l2p[la] = b;
        }
        if lb != UNBOUND {
            self.l2p[lb] = a;
        }
    }

    pub fn to_allocation(&self, logicals: &[Qubit], device: &DeviceGraph) -> Allocation {
        let mut a = Allocation::new();
        for (l, &p) in self.l2p.iter().enumerate() {
            if p != UNBOUND {
                a.bind(logicals[l], device.qubit_at(p))
                    .expect("layout is injective");
            }
        }
        a
    }

    pub fn from_allocation(
        alloc: &Allocation,
        logical_index: &BTreeMap<Qubit, usize>,
        physicals: usize,
        device: &DeviceGraph,
    ) -> Result<Self, AllocError> {
        let mut layout = Self::new(logical_index.len(), physicals);
        for (l, p) in alloc.iter() {
            let Some(&li) = logical_index.get(&l) else {
                continue;
            };
            let pi = device.dense(p).ok_or(AllocError::UnknownPhysical(p))?;
            if layout.p2l[pi] != UNBOUND {
                return Err(AllocError::NotInjective {
                    logical: l,
                    physical: p,
                });
            }
            layout.bind(li, pi);
        }
        Ok(layout)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Op {
    Single { l: usize, idx: usize },
    Two { a: usize, b: usize, swap: bool, idx: usize },
    Measure { l: usize, idx: usize },
}

pub(crate) fn compile_ops(instructions: &[Instruction], logical_index: &BTreeMap<Qubit, usize>) -> Vec<Op> {
    instructions
        .iter()
        .enumerate()
        .filter_map(|(idx, instr)| match instr {
            Instruction::Gate(g) if g.is_two_qubit() => Some(Op::Two {
                a: logical_index[&g.qubits[0]],
                b: logical_index[&g.qubits[1]],
                swap: g.kind == crate::frontend::GateKind::Swap,
                idx,
            }),
            Instruction::Gate(g) => Some(Op::Single {
                l: logical_index[&g.qubits[0]],
                idx,
            }),
            Instruction::Measure { qubit, .. } => Some(Op::Measure {
                l: logical_index[qubit],
                idx,
            }),
            _ => None,
        })
        .collect()
}

pub(crate) trait RouteSink {
    fn swap(&mut self, a: usize, b: usize);
    fn op(&mut self, op: &Op, phys: [usize; 2], layout: &Layout);
}

/// Routes one block's operations, mutating `layout` as SWAPs are applied.
pub(crate) fn route_ops<S: RouteSink>(
    ops: &[Op],
    layout: &mut Layout,
    device: &DeviceGraph,
    mode: SwapMode,
    sink: &mut S,
) -> Result<(), AllocError> {
    for op in ops {
        match *op {
            Op::Single { l, .. } => {
                let p = bind_single(layout, l, device, |i| device.dense_single(i))?;
                sink.op(op, [p, UNBOUND], layout);
            }
            Op::Measure { l, .. } => {
                let p = bind_single(layout, l, device, |i| device.dense_readout(i))?;
                sink.op(op, [p, UNBOUND], layout);
            }
            Op::Two { a, b, .. } => {
                bind_pair(layout, a, b, device)?;
                let (pa, pb) = (layout.l2p[a], layout.l2p[b]);
                let path = device.dense_path(pa, pb);
                let hops = path.len() - 1;
                // Move the first operand to the node before the second.
                for w in path[..hops].windows(2) {
                    layout.swap(w[0], w[1]);
                    sink.swap(w[0], w[1]);
                }
                sink.op(op, [layout.l2p[a], pb], layout);
                if mode == SwapMode::Eager {
                    for w in path[..hops].windows(2).rev() {
                        layout.swap(w[0], w[1]);
                        sink.swap(w[0], w[1]);
                    }
                }
            }
        }
    }
    Ok(())
}

fn free_positions(layout: &Layout) -> impl Iterator<Item = usize> + '_ {
    layout
        .p2l
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == UNBOUND)
        .map(|(p, _)| p)
}

/// Late binding for a single-qubit use: free position with the highest
/// fidelity, lowest id on ties.
fn bind_single(
    layout: &mut Layout,
    l: usize,
    device: &DeviceGraph,
    fidelity: impl Fn(usize) -> f64,
) -> Result<usize, AllocError> {
    if layout.l2p[l] != UNBOUND {
        return Ok(layout.l2p[l]);
    }
    let p = free_positions(layout)
        .max_by(|&x, &y| fidelity(x).total_cmp(&fidelity(y)).then(y.cmp(&x)))
        .ok_or(AllocError::DeviceTooSmall {
            logical: layout.l2p.len(),
            physical: device.num_qubits(),
        })?;
    layout.bind(l, p);
    Ok(p)
}

/// Late binding for a two-qubit use: the free position cheapest to route
/// to the partner, or the best free edge if both are unbound.
fn bind_pair(layout: &mut Layout, a: usize, b: usize, device: &DeviceGraph) -> Result<(), AllocError> {
    let logical = layout.l2p.len();
    let too_small = || AllocError::DeviceTooSmall {
        logical,
        physical: device.num_qubits(),
    };
    let (pa, pb) = (layout.l2p[a], layout.l2p[b]);
    if pa == UNBOUND && pb == UNBOUND {
        let free: Vec<usize> = free_positions(layout).collect();
        let best_edge = free
            .iter()
            .flat_map(|&x| free.iter().map(move |&y| (x, y)))
            .filter(|&(x, y)| x != y && device.dense_edge_fidelity(x, y) > 0.0)
            .max_by(|&(x1, y1), &(x2, y2)| {
                device
                    .dense_edge_fidelity(x1, y1)
                    .total_cmp(&device.dense_edge_fidelity(x2, y2))
                    .then((x2, y2).cmp(&(x1, y1)))
            });
        match best_edge {
            Some((x, y)) => {
                layout.bind(a, x);
                layout.bind(b, y);
                return Ok(());
            }
            None => {
                let x = *free.first().ok_or_else(too_small)?;
                layout.bind(a, x);
            }
        }
    }
    for (me, partner) in [(a, b), (b, a)] {
        if layout.l2p[me] != UNBOUND {
            continue;
        }
        let target = layout.l2p[partner];
        let p = free_positions(layout)
            .min_by(|&x, &y| {
                device
                    .dense_cost(x, target)
                    .total_cmp(&device.dense_cost(y, target))
                    .then(x.cmp(&y))
            })
            .ok_or_else(too_small)?;
        layout.bind(me, p);
    }
    Ok(())
}

/// Sink that materializes physical instructions. Measurements are left
/// logical and recorded with the allocation in effect, for
/// [`rewrite_measures`](super::rewrite_measures).
pub(crate) struct EmitSink<'a> {
    pub source: &'a [Instruction],
    pub device: &'a DeviceGraph,
    pub logicals: &'a [Qubit],
    pub out: Vec<Instruction>,
    pub swaps: Vec<(usize, usize)>,
    pub swap_positions: Vec<usize>,
    pub measure_points: Vec<(usize, Allocation)>,
}

impl<'a> EmitSink<'a> {
    pub fn new(source: &'a [Instruction], device: &'a DeviceGraph, logicals: &'a [Qubit]) -> Self {
        Self {
            source,
            device,
            logicals,
            out: Vec::new(),
            swaps: Vec::new(),
            swap_positions: Vec::new(),
            measure_points: Vec::new(),
        }
    }
}

impl RouteSink for EmitSink<'_> {
    fn swap(&mut self, a: usize, b: usize) {
        self.swap_positions.push(self.out.len());
        self.swaps.push((a, b));
        self.out.push(Instruction::Gate(Gate::swap(
            self.device.qubit_at(a),
            self.device.qubit_at(b),
        )));
    }

    fn op(&mut self, op: &Op, phys: [usize; 2], layout: &Layout) {
        match *op {
            Op::Single { idx, .. } | Op::Two { idx, .. } => {
                let Instruction::Gate(g) = &self.source[idx] else {
                    unreachable!("gate op points at a gate");
                };
                let mut g = g.clone();
                for (slot, &p) in g.qubits.iter_mut().zip(&phys) {
                    *slot = self.device.qubit_at(p);
                }
                self.out.push(Instruction::Gate(g));
            }
            Op::Measure { idx, .. } => {
                self.measure_points
                    .push((self.out.len(), layout.to_allocation(self.logicals, self.device)));
                self.out.push(self.source[idx].clone());
            }
        }
    }
}

/// A block after routing: physical instructions and the SWAPs inserted.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedBlock {
    pub block: BasicBlock,
    pub swaps: Vec<SwapOp>,
}

/// Routes one block lazily from `incoming`.
///
/// Non-adjacent two-qubit gates get a SWAP chain along the device's
/// shortest path, moving the first operand next to the second, placed
/// immediately before the gate. Logical qubits missing from `incoming` are
/// bound at first use. Returns the routed block and the outgoing mapping.
pub fn lazy_route_block(
    block: &BasicBlock,
    incoming: &Allocation,
    device: &DeviceGraph,
) -> Result<(RoutedBlock, Allocation), AllocError> {
    let mut logicals: Vec<Qubit> = incoming.iter().map(|(l, _)| l).collect();
    logicals.extend(block.instructions.iter().flat_map(|i| i.qubits().iter().copied()));
    logicals.sort_unstable();
    logicals.dedup();
    if logicals.len() > device.num_qubits() {
        return Err(AllocError::DeviceTooSmall {
            logical: logicals.len(),
            physical: device.num_qubits(),
        });
    }
    let index: BTreeMap<Qubit, usize> = logicals.iter().enumerate().map(|(i, &q)| (q, i)).collect();
    let mut layout = Layout::from_allocation(incoming, &index, device.num_qubits(), device)?;
    let ops = compile_ops(&block.instructions, &index);
    let mut sink = EmitSink::new(&block.instructions, device, &logicals);
    route_ops(&ops, &mut layout, device, SwapMode::Lazy, &mut sink)?;

    let mut routed = block.clone();
    routed.instructions = sink.out;
    let trace: BTreeMap<usize, Allocation> = sink.measure_points.into_iter().collect();
    rewrite_block_measures(&mut routed, |idx| trace.get(&idx))?;
    let swaps = sink
        .swaps
        .iter()
        .zip(&sink.swap_positions)
        .map(|(&(a, b), &position)| SwapOp {
            block: block.id,
            position,
            pair: (device.qubit_at(a), device.qubit_at(b)),
        })
        .collect();
    Ok((
        RoutedBlock {
            block: routed,
            swaps,
        },
        layout.to_allocation(&logicals, device),
    ))
}
