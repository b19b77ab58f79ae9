use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cost::{allocation_cost, extend_weights};
use super::route::{compile_ops, route_ops, EmitSink, Layout, Op, RouteSink, UNBOUND};
use super::trampoline::{insert_trampolines, inversion_blocks, plan_inverse_swaps, rewrite_block_measures};
use super::{logical_qubits, AllocConfig, AllocError, AllocatedProgram, Allocation, SwapMode, SwapOp};
use crate::cfg::{BlockId, ControlFlowGraph};
use crate::device::DeviceGraph;
use crate::dominators::{compute_dominators, DominatorTree};
use crate::frontend::Qubit;
use crate::seed::derive_seed;
use crate::weights::BlockWeights;

struct EdgeInversion {
    weight: f64,
    /// Reverse-postorder positions of the blocks undone on this edge.
    blocks: Vec<usize>,
}

/// Precomputed allocation problem: everything the energy function needs,
/// indexed densely.
pub(crate) struct Problem<'a> {
    cfg: &'a ControlFlowGraph,
    device: &'a DeviceGraph,
    weights: &'a BlockWeights,
    mode: SwapMode,
    tree: DominatorTree,
    logicals: Vec<Qubit>,
    logical_index: BTreeMap<Qubit, usize>,
    rpo: Vec<BlockId>,
    idom_pos: Vec<usize>,
    ops: Vec<Vec<Op>>,
    block_weight: Vec<f64>,
    inversions: Vec<EdgeInversion>,
    single_cost: Vec<f64>,
    readout_cost: Vec<f64>,
}

struct CostSink<'p> {
    device: &'p DeviceGraph,
    single_cost: &'p [f64],
    readout_cost: &'p [f64],
    gates: f64,
    swaps: f64,
}

impl RouteSink for CostSink<'_> {
    fn swap(&mut self, a: usize, b: usize) {
        self.swaps += -3.0 * self.device.dense_edge_fidelity(a, b).ln();
    }

    fn op(&mut self, op: &Op, phys: [usize; 2], _: &Layout) {
        self.gates += match *op {
            Op::Single { .. } => self.single_cost[phys[0]],
            Op::Measure { .. } => self.readout_cost[phys[0]],
            Op::Two { swap, .. } => {
                let c = -self.device.dense_edge_fidelity(phys[0], phys[1]).ln();
                if swap {
                    3.0 * c
                } else {
                    c
                }
            }
        };
    }
}

/// Energy comparison: lower cost wins; near-equal costs fall back to the
/// lexicographically smaller mapping.
fn better(a: (f64, &Layout), b: (f64, &Layout)) -> bool {
    let tol = 1e-12 * a.0.abs().max(b.0.abs()).max(1.0);
    if (a.0 - b.0).abs() > tol {
        return a.0 < b.0;
    }
    a.1.l2p.cmp(&b.1.l2p) == Ordering::Less
}

impl<'a> Problem<'a> {
    pub fn new(
        cfg: &'a ControlFlowGraph,
        weights: &'a BlockWeights,
        device: &'a DeviceGraph,
        mode: SwapMode,
    ) -> Result<Self, AllocError> {
        let rpo = cfg.reverse_postorder();
        if rpo.len() != cfg.len() {
            return Err(AllocError::UnreachableBlocks);
        }
        let logicals = logical_qubits(cfg);
        if logicals.len() > device.num_qubits() {
            return Err(AllocError::DeviceTooSmall {
                logical: logicals.len(),
                physical: device.num_qubits(),
            });
        }
        let logical_index: BTreeMap<Qubit, usize> =
            logicals.iter().enumerate().map(|(i, &q)| (q, i)).collect();
        let tree = compute_dominators(cfg);
        let pos: BTreeMap<BlockId, usize> = rpo.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let idom_pos = rpo
            .iter()
            .map(|&b| pos[&tree.idom(b).expect("every block is in the tree")])
            .collect();
        let ops = rpo
            .iter()
            .map(|&b| compile_ops(&cfg.block(b).expect("rpo lists graph blocks").instructions, &logical_index))
            .collect();
        let block_weight = rpo
            .iter()
            .map(|&b| weights.get(b).ok_or(AllocError::MissingWeight(b)))
            .collect::<Result<Vec<f64>, _>>()?;

        let mut inversions = Vec::new();
        if mode == SwapMode::Lazy {
            for ((from, to), blocks) in inversion_blocks(cfg, &tree) {
                let p: f64 = cfg
                    .successors(from)
                    .iter()
                    .filter(|e| e.to == to)
                    .map(|e| e.probability)
                    .sum();
                inversions.push(EdgeInversion {
                    weight: block_weight[pos[&from]] * p,
                    blocks: blocks.iter().map(|b| pos[b]).collect(),
                });
            }
        }

        let n = device.num_qubits();
        Ok(Self {
            cfg,
            device,
            weights,
            mode,
            tree,
            logicals,
            logical_index,
            rpo,
            idom_pos,
            ops,
            block_weight,
            inversions,
            single_cost: (0..n).map(|i| -device.dense_single(i).ln()).collect(),
            readout_cost: (0..n).map(|i| -device.dense_readout(i).ln()).collect(),
        })
    }

    fn physicals(&self) -> usize {
        self.device.num_qubits()
    }

    /// Mapping with logical `i` on the `i`-th physical qubit.
    fn identity_layout(&self) -> Layout {
        let mut l = Layout::new(self.logicals.len(), self.physicals());
        for i in 0..self.logicals.len() {
            l.bind(i, i);
        }
        l
    }

    fn random_layout(&self, rng: &mut ChaCha8Rng) -> Layout {
        let mut slots: Vec<usize> = (0..self.physicals()).collect();
        for i in (1..slots.len()).rev() {
            slots.swap(i, rng.gen_range(0..=i));
        }
        let mut l = Layout::new(self.logicals.len(), self.physicals());
        for (i, &p) in slots.iter().take(self.logicals.len()).enumerate() {
            l.bind(i, p);
        }
        l
    }

    /// Entry layout from a user mapping; every logical qubit must be mapped.
    pub fn layout_from(&self, entry: &Allocation) -> Result<Layout, AllocError> {
        let layout = Layout::from_allocation(entry, &self.logical_index, self.physicals(), self.device)?;
        if let Some(i) = layout.l2p.iter().position(|&p| p == UNBOUND) {
            return Err(AllocError::Unmapped(self.logicals[i]));
        }
        Ok(layout)
    }

    /// Weighted cost of routing the whole program from `entry`.
    pub fn energy(&self, entry: &Layout) -> f64 {
        let mut outgoing: Vec<Layout> = Vec::with_capacity(self.rpo.len());
        let mut swap_cost = vec![0.0; self.rpo.len()];
        let mut total = 0.0;
        for pos in 0..self.rpo.len() {
            let mut layout = if pos == 0 {
                entry.clone()
            } else {
                outgoing[self.idom_pos[pos]].clone()
            };
            let mut sink = CostSink {
                device: self.device,
                single_cost: &self.single_cost,
                readout_cost: &self.readout_cost,
                gates: 0.0,
                swaps: 0.0,
            };
            route_ops(&self.ops[pos], &mut layout, self.device, self.mode, &mut sink)
                .expect("entry layout binds every logical qubit");
            total += self.block_weight[pos] * (sink.gates + sink.swaps);
            swap_cost[pos] = sink.swaps;
            outgoing.push(layout);
        }
        for inv in &self.inversions {
            let c: f64 = inv.blocks.iter().map(|&b| swap_cost[b]).sum();
            total += inv.weight * c;
        }
        total
    }

    /// Best entry layout over all restarts.
    pub fn anneal(&self, config: &AllocConfig) -> Layout {
        let restarts = config.restarts.max(1);
        let results: Vec<(f64, Layout)> = (0..restarts)
            .into_par_iter()
            .map(|r| self.anneal_once(config, r))
            .collect();
        results
            .into_iter()
            .reduce(|best, cand| {
                if better((cand.0, &cand.1), (best.0, &best.1)) {
                    cand
                } else {
                    best
                }
            })
            .expect("at least one restart")
            .1
    }

    fn anneal_once(&self, config: &AllocConfig, restart: usize) -> (f64, Layout) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, restart as u64));
        let mut layout = if restart == 0 {
            self.identity_layout()
        } else {
            self.random_layout(&mut rng)
        };
        let mut current = self.energy(&layout);
        let mut best = (current, layout.clone());
        let n = self.physicals();
        let occupied = self.logicals.len();
        if n >= 2 && occupied > 0 {
            let mut temperature = config.initial_temperature;
            for _ in 0..config.iterations {
                // First slot holds a logical qubit, second is any other slot.
                let i = layout.l2p[rng.gen_range(0..occupied)];
                let mut j = rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                layout.swap(i, j);
                let e = self.energy(&layout);
                let delta = e - current;
                let accept = delta <= 0.0
                    || (temperature > 0.0 && rng.gen::<f64>() < (-delta / temperature).exp());
                if accept {
                    current = e;
                    if better((e, &layout), (best.0, &best.1)) {
                        best = (e, layout.clone());
                    }
                } else {
                    layout.swap(i, j);
                }
                temperature *= config.cooling;
            }
        }
        self.polish(best)
    }

    /// Steepest descent over all single transpositions of slots.
    fn polish(&self, (mut cost, mut layout): (f64, Layout)) -> (f64, Layout) {
        let n = self.physicals();
        for _ in 0..10_000 {
            let mut step: Option<(f64, Layout)> = None;
            for i in 0..n {
                for j in i + 1..n {
                    if layout.p2l[i] == UNBOUND && layout.p2l[j] == UNBOUND {
                        continue;
                    }
                    let mut cand = layout.clone();
                    cand.swap(i, j);
                    let e = self.energy(&cand);
                    let beats_step = match &step {
                        None => better((e, &cand), (cost, &layout)),
                        Some((se, sl)) => better((e, &cand), (*se, sl)),
                    };
                    if beats_step {
                        step = Some((e, cand));
                    }
                }
            }
            match step {
                Some(s) => (cost, layout) = s,
                None => break,
            }
        }
        (cost, layout)
    }

    /// Routes the program from `entry` and builds the physical output.
    pub fn materialize(&self, entry: &Layout) -> Result<AllocatedProgram, AllocError> {
        let mut out = self.cfg.clone();
        let mut outgoing: Vec<Layout> = Vec::with_capacity(self.rpo.len());
        let mut block_swaps: BTreeMap<BlockId, Vec<(Qubit, Qubit)>> = BTreeMap::new();
        let mut swaps = Vec::new();
        for (pos, &id) in self.rpo.iter().enumerate() {
            let mut layout = if pos == 0 {
                entry.clone()
            } else {
                outgoing[self.idom_pos[pos]].clone()
            };
            let source = &self.cfg.block(id).expect("rpo lists graph blocks").instructions;
            let mut sink = EmitSink::new(source, self.device, &self.logicals);
            route_ops(&self.ops[pos], &mut layout, self.device, self.mode, &mut sink)?;
            let block = out.block_mut(id).expect("output keeps every block");
            block.instructions = sink.out;
            let trace: BTreeMap<usize, Allocation> = sink.measure_points.into_iter().collect();
            rewrite_block_measures(block, |idx| trace.get(&idx))?;
            let pairs: Vec<(Qubit, Qubit)> = sink
                .swaps
                .iter()
                .map(|&(a, b)| (self.device.qubit_at(a), self.device.qubit_at(b)))
                .collect();
            for (&pair, &position) in pairs.iter().zip(&sink.swap_positions) {
                swaps.push(SwapOp {
                    block: id,
                    position,
                    pair,
                });
            }
            if !pairs.is_empty() {
                block_swaps.insert(id, pairs);
            }
            outgoing.push(layout);
        }

        let mut trampolines = BTreeMap::new();
        if self.mode == SwapMode::Lazy {
            let plan = plan_inverse_swaps(self.cfg, &self.tree, &block_swaps);
            let (with_tramps, made) = insert_trampolines(&out, &plan);
            out = with_tramps;
            for (&t, _) in &made {
                let block = out.block(t).expect("trampoline was added");
                for (position, instr) in block.instructions.iter().enumerate() {
                    let q = instr.qubits();
                    swaps.push(SwapOp {
                        block: t,
                        position,
                        pair: (q[0], q[1]),
                    });
                }
            }
            trampolines = made;
        }
        swaps.sort();

        let weights = extend_weights(&out, self.weights, &trampolines)?;
        let cost = allocation_cost(&out, &weights, self.device)?;
        let program = out.to_program()?;
        Ok(AllocatedProgram {
            cfg: out,
            program,
            entry_mapping: entry.to_allocation(&self.logicals, self.device),
            cost,
            weights,
            trampolines,
            swaps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::build_cfg;
    use crate::frontend::parse_program;

    fn line(n: u32, f: f64) -> DeviceGraph {
        let q: Vec<u32> = (0..n).collect();
        let e: Vec<(u32, u32, f64)> = (0..n - 1).map(|i| (i, i + 1, f)).collect();
        DeviceGraph::from_edges(&q, &e).unwrap()
    }

    #[test]
    fn energy_matches_materialized_cost() {
        let g = build_cfg(
            &parse_program(
                "DECLARE ro BIT\nCZ 0 3\nMEASURE 0 ro[0]\nJUMP-WHEN @R ro[0]\nCZ 1 3\nJUMP @M\n\
                 LABEL @R\nCZ 2 0\nLABEL @M\nCZ 0 1\nHALT",
            )
            .unwrap(),
        )
        .unwrap();
        let d = line(5, 0.9);
        let w = crate::weights::block_weights(&g).unwrap();
        for mode in [SwapMode::Lazy, SwapMode::Eager] {
            let p = Problem::new(&g, &w, &d, mode).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..20 {
                let l = p.random_layout(&mut rng);
                let e = p.energy(&l);
                let m = p.materialize(&l).unwrap();
                assert!((e - m.cost).abs() <= 1e-9 * e.max(1.0), "{e} vs {}", m.cost);
            }
        }
    }

    #[test]
    fn annealing_is_deterministic() {
        let g = build_cfg(&parse_program("CZ 0 2\nCZ 1 3\nCZ 0 3\nHALT").unwrap()).unwrap();
        let d = line(5, 0.95);
        let w = BlockWeights::uniform(&g);
        let p = Problem::new(&g, &w, &d, SwapMode::Lazy).unwrap();
        let cfg = AllocConfig {
            seed: 11,
            iterations: 500,
            ..AllocConfig::default()
        };
        assert_eq!(p.anneal(&cfg), p.anneal(&cfg));
    }

    #[test]
    fn rejects_unreachable_and_oversized() {
        let g = build_cfg(&parse_program("JUMP @e\nLABEL @dead\nHALT\nLABEL @e\nHALT").unwrap()).unwrap();
        let w = BlockWeights::uniform(&g);
        assert!(matches!(
            Problem::new(&g, &w, &line(2, 0.9), SwapMode::Lazy),
            Err(AllocError::UnreachableBlocks)
        ));
        let g = build_cfg(&parse_program("CZ 0 1\nCZ 1 2\nHALT").unwrap()).unwrap();
        let w = BlockWeights::uniform(&g);
        assert!(matches!(
            Problem::new(&g, &w, &line(2, 0.9), SwapMode::Lazy),
            Err(AllocError::DeviceTooSmall { logical: 3, physical: 2 })
        ));
    }
}
