//! Dense state-vector simulation of control-flow programs.
//!
//! Programs are run through their CFG. Qubit ids are compacted to a dense
//! range (at most [`MAX_QUBITS`]), so a physically allocated program on a
//! large device only pays for the qubits it touches.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cfg::{build_cfg, BlockId, CfgError, Terminator};
use crate::device::DeviceGraph;
use crate::frontend::{Gate, GateKind, Instruction, JumpCondition, Program, Qubit};
use crate::metrics::Histogram;
use crate::seed::{derive_seed, splitmix64};

pub const MAX_QUBITS: usize = 20;
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

/// Salt separating the noise stream from the measurement stream.
const NOISE_STREAM: u64 = 0x6E6F_6973_6500_0001;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("program uses {0} qubits; the simulator supports at most {MAX_QUBITS}")]
    TooManyQubits(usize),
    #[error("qubit index {qubit} out of range for a {n}-qubit state")]
    QubitOutOfRange { qubit: usize, n: usize },
    #[error("step limit of {0} exceeded: possible infinite loop")]
    StepLimit(u64),
    #[error("number of trials must be positive")]
    ZeroTrials,
    #[error("gate on ({0}, {1}) is not on a device edge")]
    NonEdge(Qubit, Qubit),
    #[error("qubit {0} is not on the device")]
    UnknownQubit(Qubit),
    #[error(transparent)]
    Cfg(#[from] CfgError),
}

/// State vector over `n` qubits; qubit `k` is bit `k` of the basis index.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amps: Vec<Complex64>,
    n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
}

type Matrix2 = [[Complex64; 2]; 2];

fn rx_matrix(theta: f64) -> Matrix2 {
    let c = Complex64::new((theta / 2.0).cos(), 0.0);
    let s = Complex64::new(0.0, -(theta / 2.0).sin());
    [[c, s], [s, c]]
}

fn rz_matrix(phi: f64) -> Matrix2 {
    let z = Complex64::new(0.0, 0.0);
    [[Complex64::from_polar(1.0, -phi / 2.0), z], [z, Complex64::from_polar(1.0, phi / 2.0)]]
}

impl QuantumState {
    /// `|0...0>` on `n` qubits.
    pub fn new(n: usize) -> Result<Self, SimError> {
        if n > MAX_QUBITS {
            return Err(SimError::TooManyQubits(n));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { amps, n })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check(&self, q: usize) -> Result<(), SimError> {
        if q < self.n {
            Ok(())
        } else {
            Err(SimError::QubitOutOfRange { qubit: q, n: self.n })
        }
    }

    fn apply_matrix(&mut self, q: usize, m: &Matrix2) {
        let mask = 1usize << q;
        for base in (0..self.amps.len()).step_by(mask << 1) {
            for i in base..base + mask {
                let (a, b) = (self.amps[i], self.amps[i | mask]);
                self.amps[i] = m[0][0] * a + m[0][1] * b;
                self.amps[i | mask] = m[1][0] * a + m[1][1] * b;
            }
        }
    }

    pub fn apply_rx(&mut self, q: usize, theta: f64) -> Result<(), SimError> {
        self.check(q)?;
        self.apply_matrix(q, &rx_matrix(theta));
        Ok(())
    }

    pub fn apply_rz(&mut self, q: usize, phi: f64) -> Result<(), SimError> {
        self.check(q)?;
        self.apply_matrix(q, &rz_matrix(phi));
        Ok(())
    }

    pub fn apply_cz(&mut self, a: usize, b: usize) -> Result<(), SimError> {
        self.check(a)?;
        self.check(b)?;
        let both = (1usize << a) | (1usize << b);
        for (i, amp) in self.amps.iter_mut().enumerate() {
            if i & both == both {
                *amp = -*amp;
            }
        }
        Ok(())
    }

    pub fn apply_swap(&mut self, a: usize, b: usize) -> Result<(), SimError> {
        self.check(a)?;
        self.check(b)?;
        let (ma, mb) = (1usize << a, 1usize << b);
        for i in 0..self.amps.len() {
            // Visit each |..1..0..> / |..0..1..> pair once.
            if i & ma != 0 && i & mb == 0 {
                self.amps.swap(i, (i & !ma) | mb);
            }
        }
        Ok(())
    }

    pub fn apply_pauli(&mut self, q: usize, p: Pauli) -> Result<(), SimError> {
        self.check(q)?;
        let o = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        let m = match p {
            Pauli::X => [[o, one], [one, o]],
            Pauli::Y => [[o, -i], [i, o]],
            Pauli::Z => [[one, o], [o, -one]],
        };
        self.apply_matrix(q, &m);
        Ok(())
    }

    /// Applies a gate whose qubit ids are state indices.
    pub fn apply_gate(&mut self, g: &Gate) -> Result<(), SimError> {
        let q = |k: usize| g.qubits[k] as usize;
        match g.kind {
            GateKind::Rx => self.apply_rx(q(0), g.params[0]),
            GateKind::Rz => self.apply_rz(q(0), g.params[0]),
            GateKind::Cz => self.apply_cz(q(0), q(1)),
            GateKind::Swap => self.apply_swap(q(0), q(1)),
        }
    }

    /// Probability of reading 1 on qubit `q`.
    pub fn probability_one(&self, q: usize) -> Result<f64, SimError> {
        self.check(q)?;
        let mask = 1usize << q;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Projects qubit `q` onto `outcome` and renormalizes. Returns the
    /// probability the outcome had.
    pub fn project(&mut self, q: usize, outcome: bool) -> Result<f64, SimError> {
        let p1 = self.probability_one(q)?;
        let p = if outcome { p1 } else { 1.0 - p1 };
        let mask = 1usize << q;
        let scale = if p > 0.0 { 1.0 / p.sqrt() } else { 0.0 };
        for (i, amp) in self.amps.iter_mut().enumerate() {
            if (i & mask != 0) == outcome {
                *amp *= scale;
            } else {
                *amp = Complex64::new(0.0, 0.0);
            }
        }
        Ok(p)
    }

    /// Born-rule measurement with collapse.
    pub fn measure<R: Rng>(&mut self, q: usize, rng: &mut R) -> Result<bool, SimError> {
        let p1 = self.probability_one(q)?;
        let outcome = rng.gen::<f64>() < p1;
        self.project(q, outcome)?;
        Ok(outcome)
    }
}

#[derive(Debug, Clone, Copy)]
enum SimOp {
    Gate { kind: GateKind, param: f64, q: [usize; 2] },
    Measure { q: usize, addr: usize },
}

#[derive(Debug, Clone, Copy)]
enum SimTerm {
    Jump(usize),
    Cond { addr: usize, when: bool, taken: usize, fallthrough: usize },
    Halt,
}

#[derive(Debug, Clone)]
struct SimBlock {
    ops: Vec<SimOp>,
    term: SimTerm,
}

/// Per-op error probabilities for the noisy channel.
#[derive(Debug, Clone)]
struct NoiseModel {
    /// `[block][op]`: Pauli probability for gates, flip probability for
    /// measurements.
    p: Vec<Vec<f64>>,
}

/// One execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    /// Declared memory in declaration order, element 0 first.
    pub readout: String,
    pub block_trace: Vec<BlockId>,
    pub instruction_count: u64,
}

/// Aggregate of many executions.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub histogram: Histogram,
    /// Total visits per block over all trials, every block listed.
    pub visits: BTreeMap<BlockId, u64>,
    pub trials: u64,
}

impl SimResult {
    /// Mean executions per trial of each block.
    pub fn mean_visits(&self) -> BTreeMap<BlockId, f64> {
        self.visits
            .iter()
            .map(|(&b, &v)| (b, v as f64 / self.trials as f64))
            .collect()
    }

    /// Mean visits normalized to sum to 1.
    pub fn normalized_frequencies(&self) -> BTreeMap<BlockId, f64> {
        let total: u64 = self.visits.values().sum();
        self.visits
            .iter()
            .map(|(&b, &v)| (b, if total == 0 { 0.0 } else { v as f64 / total as f64 }))
            .collect()
    }
}

/// Exact readout distribution from branching over measurement outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub probabilities: BTreeMap<String, f64>,
    /// Probability mass dropped below the branching cutoff.
    pub truncated: f64,
}

/// Interpreter over a program's CFG.
#[derive(Debug, Clone)]
pub struct Simulator {
    blocks: Vec<SimBlock>,
    ids: Vec<BlockId>,
    entry: usize,
    /// Dense index -> program qubit id.
    qubits: Vec<Qubit>,
    memory_bits: usize,
    max_steps: u64,
}

impl Simulator {
    pub fn new(program: &Program) -> Result<Self, SimError> {
        let cfg = build_cfg(program)?;
        let qubits: Vec<Qubit> = program.qubits().into_iter().collect();
        if qubits.len() > MAX_QUBITS {
            return Err(SimError::TooManyQubits(qubits.len()));
        }
        let qindex: BTreeMap<Qubit, usize> = qubits.iter().enumerate().map(|(i, &q)| (q, i)).collect();
        let mut offsets = BTreeMap::new();
        let mut memory_bits = 0;
        for (name, size) in cfg.memory() {
            offsets.insert(name.clone(), memory_bits);
            memory_bits += size;
        }
        let addr = |r: &crate::frontend::MemoryRef| offsets[&r.name] + r.index;

        let ids: Vec<BlockId> = cfg.block_ids().collect();
        let pos: BTreeMap<BlockId, usize> = ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let blocks = cfg
            .blocks()
            .map(|b| {
                let ops = b
                    .instructions
                    .iter()
                    .filter_map(|instr| match instr {
                        Instruction::Gate(g) => {
                            let q1 = g.qubits.get(1).map_or(usize::MAX, |q| qindex[q]);
                            Some(SimOp::Gate {
                                kind: g.kind,
                                param: g.params.first().copied().unwrap_or(0.0),
                                q: [qindex[&g.qubits[0]], q1],
                            })
                        }
                        Instruction::Measure { qubit, target } => Some(SimOp::Measure {
                            q: qindex[qubit],
                            addr: addr(target),
                        }),
                        _ => None,
                    })
                    .collect();
                let term = match &b.terminator {
                    Terminator::Jump(t) | Terminator::Fallthrough(t) => SimTerm::Jump(pos[t]),
                    Terminator::CondJump {
                        condition,
                        bit,
                        taken,
                        fallthrough,
                        ..
                    } => SimTerm::Cond {
                        addr: addr(bit),
                        when: *condition == JumpCondition::When,
                        taken: pos[taken],
                        fallthrough: pos[fallthrough],
                    },
                    Terminator::Halt => SimTerm::Halt,
                };
                SimBlock { ops, term }
            })
            .collect();
        Ok(Self {
            blocks,
            entry: pos[&cfg.entry()],
            ids,
            qubits,
            memory_bits,
            max_steps: DEFAULT_MAX_STEPS,
        })
    }

    /// Caps the number of executed instructions per run.
    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn num_qubits(&self) -> usize {
        self.qubits.len()
    }

    pub fn block_ids(&self) -> &[BlockId] {
        &self.ids
    }

    fn readout(memory: &[bool]) -> String {
        memory.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    fn apply(state: &mut QuantumState, kind: GateKind, param: f64, q: [usize; 2]) {
        // Indices come from the compiled program and are always in range.
        let r = match kind {
            GateKind::Rx => state.apply_rx(q[0], param),
            GateKind::Rz => state.apply_rz(q[0], param),
            GateKind::Cz => state.apply_cz(q[0], q[1]),
            GateKind::Swap => state.apply_swap(q[0], q[1]),
        };
        debug_assert!(r.is_ok());
    }

    /// Core interpreter. `visit` sees every block index entered.
    fn execute(
        &self,
        rng: &mut ChaCha8Rng,
        mut noise: Option<(&NoiseModel, &mut ChaCha8Rng)>,
        mut visit: impl FnMut(usize),
    ) -> Result<(String, u64), SimError> {
        let mut state = QuantumState::new(self.qubits.len())?;
        let mut memory = vec![false; self.memory_bits];
        let mut steps: u64 = 0;
        let mut b = self.entry;
        loop {
            visit(b);
            let block = &self.blocks[b];
            for (k, op) in block.ops.iter().enumerate() {
                steps += 1;
                if steps > self.max_steps {
                    return Err(SimError::StepLimit(self.max_steps));
                }
                match *op {
                    SimOp::Gate { kind, param, q } => {
                        Self::apply(&mut state, kind, param, q);
                        if let Some((model, nrng)) = noise.as_mut() {
                            let p = model.p[b][k];
                            if p > 0.0 {
                                let arity = kind.arity();
                                for &qq in &q[..arity] {
                                    if nrng.gen::<f64>() < p {
                                        let pauli = [Pauli::X, Pauli::Y, Pauli::Z][nrng.gen_range(0..3)];
                                        state.apply_pauli(qq, pauli)?;
                                    }
                                }
                            }
                        }
                    }
                    SimOp::Measure { q, addr } => {
                        let mut bit = state.measure(q, rng)?;
                        if let Some((model, nrng)) = noise.as_mut() {
                            let p = model.p[b][k];
                            if p > 0.0 && nrng.gen::<f64>() < p {
                                bit = !bit;
                            }
                        }
                        memory[addr] = bit;
                    }
                }
            }
            steps += 1;
            if steps > self.max_steps {
                return Err(SimError::StepLimit(self.max_steps));
            }
            b = match block.term {
                SimTerm::Jump(t) => t,
                SimTerm::Cond {
                    addr,
                    when,
                    taken,
                    fallthrough,
                } => {
                    let cond = if when {
                        JumpCondition::When
                    } else {
                        JumpCondition::Unless
                    };
                    if cond.taken(memory[addr]) {
                        taken
                    } else {
                        fallthrough
                    }
                }
                SimTerm::Halt => return Ok((Self::readout(&memory), steps)),
            };
        }
    }

    /// One noiseless run, deterministic in `seed`.
    pub fn run(&self, seed: u64) -> Result<RunResult, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trace = Vec::new();
        let (readout, instruction_count) = self.execute(&mut rng, None, |b| trace.push(self.ids[b]))?;
        Ok(RunResult {
            readout,
            block_trace: trace,
            instruction_count,
        })
    }

    fn aggregate(
        &self,
        trials: usize,
        one: impl Fn(usize, &mut Vec<u64>) -> Result<String, SimError> + Sync,
    ) -> Result<SimResult, SimError> {
        if trials == 0 {
            return Err(SimError::ZeroTrials);
        }
        let n = self.blocks.len();
        let (hist, visits) = (0..trials)
            .into_par_iter()
            .try_fold(
                || (Histogram::new(), vec![0u64; n]),
                |(mut h, mut v), i| {
                    h.record(one(i, &mut v)?);
                    Ok::<_, SimError>((h, v))
                },
            )
            .try_reduce(
                || (Histogram::new(), vec![0u64; n]),
                |(mut h1, mut v1), (h2, v2)| {
                    h1.merge(&h2);
                    v1.iter_mut().zip(v2).for_each(|(a, b)| *a += b);
                    Ok((h1, v1))
                },
            )?;
        Ok(SimResult {
            histogram: hist,
            visits: self.ids.iter().copied().zip(visits).collect(),
            trials: trials as u64,
        })
    }

    /// Independent noiseless trials; trial `i` uses `seed ^ splitmix64(i)`.
    pub fn run_many(&self, trials: usize, seed: u64) -> Result<SimResult, SimError> {
        self.aggregate(trials, |i, visits| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let (bits, _) = self.execute(&mut rng, None, |b| visits[b] += 1)?;
            Ok(bits)
        })
    }

    /// Trials under a Pauli channel: after each gate of fidelity `f` every
    /// involved qubit gets a random Pauli with probability
    /// `(1 - f) * noise_scale`, and each readout flips with probability
    /// `(1 - readout_fidelity) * noise_scale`. Program qubit ids must be
    /// device qubits. Noise draws come from a separate stream, so a zero
    /// scale reproduces [`run_many`](Self::run_many) exactly.
    pub fn run_noisy(
        &self,
        device: &DeviceGraph,
        trials: usize,
        seed: u64,
        noise_scale: f64,
    ) -> Result<SimResult, SimError> {
        let model = self.noise_model(device, noise_scale)?;
        let noise_seed = seed ^ splitmix64(NOISE_STREAM);
        self.aggregate(trials, |i, visits| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let mut nrng = ChaCha8Rng::seed_from_u64(derive_seed(noise_seed, i as u64));
            let (bits, _) = self.execute(&mut rng, Some((&model, &mut nrng)), |b| visits[b] += 1)?;
            Ok(bits)
        })
    }

    fn noise_model(&self, device: &DeviceGraph, scale: f64) -> Result<NoiseModel, SimError> {
        let on_device = |q: Qubit| {
            if device.contains(q) {
                Ok(q)
            } else {
                Err(SimError::UnknownQubit(q))
            }
        };
        let prob = |f: f64| ((1.0 - f) * scale).clamp(0.0, 1.0);
        let mut p = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let mut row = Vec::with_capacity(block.ops.len());
            for op in &block.ops {
                row.push(match *op {
                    SimOp::Gate { kind, q, .. } => {
                        let a = on_device(self.qubits[q[0]])?;
                        if kind.arity() == 1 {
                            prob(device.single_qubit_fidelity(a))
                        } else {
                            let b = on_device(self.qubits[q[1]])?;
                            let f = device.edge_fidelity(a, b).ok_or(SimError::NonEdge(a, b))?;
                            prob(if kind == GateKind::Swap { f.powi(3) } else { f })
                        }
                    }
                    SimOp::Measure { q, .. } => prob(device.readout_fidelity(on_device(self.qubits[q])?)),
                });
            }
            p.push(row);
        }
        Ok(NoiseModel { p })
    }

    /// Exact readout distribution, branching on every measurement. Branches
    /// whose probability falls below `cutoff` are dropped and their mass
    /// reported as truncated.
    pub fn exact_distribution(&self, cutoff: f64) -> Result<ExactDistribution, SimError> {
        struct Branch {
            state: QuantumState,
            memory: Vec<bool>,
            block: usize,
            op: usize,
            prob: f64,
            steps: u64,
        }
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        let mut truncated = 0.0;
        let mut stack = vec![Branch {
            state: QuantumState::new(self.qubits.len())?,
            memory: vec![false; self.memory_bits],
            block: self.entry,
            op: 0,
            prob: 1.0,
            steps: 0,
        }];
        while let Some(mut br) = stack.pop() {
            loop {
                br.steps += 1;
                if br.steps > self.max_steps {
                    return Err(SimError::StepLimit(self.max_steps));
                }
                let block = &self.blocks[br.block];
                if br.op < block.ops.len() {
                    let op = block.ops[br.op];
                    br.op += 1;
                    match op {
                        SimOp::Gate { kind, param, q } => Self::apply(&mut br.state, kind, param, q),
                        SimOp::Measure { q, addr } => {
                            let p1 = br.state.probability_one(q)?;
                            let mut options = Vec::new();
                            for (outcome, p) in [(false, 1.0 - p1), (true, p1)] {
                                let mass = br.prob * p;
                                if p <= 1e-15 {
                                    continue;
                                }
                                if mass < cutoff {
                                    truncated += mass;
                                    continue;
                                }
                                options.push((outcome, mass));
                            }
                            let Some((last_outcome, last_mass)) = options.pop() else {
                                break;
                            };
                            for (outcome, mass) in options {
                                let mut state = br.state.clone();
                                state.project(q, outcome)?;
                                let mut memory = br.memory.clone();
                                memory[addr] = outcome;
                                stack.push(Branch {
                                    state,
                                    memory,
                                    block: br.block,
                                    op: br.op,
                                    prob: mass,
                                    steps: br.steps,
                                });
                            }
                            br.state.project(q, last_outcome)?;
                            br.memory[addr] = last_outcome;
                            br.prob = last_mass;
                        }
                    }
                    continue;
                }
                br.op = 0;
                br.block = match block.term {
                    SimTerm::Jump(t) => t,
                    SimTerm::Cond {
                        addr,
                        when,
                        taken,
                        fallthrough,
                    } => {
                        if br.memory[addr] == when {
                            taken
                        } else {
                            fallthrough
                        }
                    }
                    SimTerm::Halt => {
                        *out.entry(Self::readout(&br.memory)).or_insert(0.0) += br.prob;
                        break;
                    }
                };
            }
        }
        Ok(ExactDistribution {
            probabilities: out,
            truncated,
        })
    }

    /// Program qubits in dense order.
    pub fn qubits(&self) -> BTreeSet<Qubit> {
        self.qubits.iter().copied().collect()
    }
}

/// Builds a simulator for `program` and runs `trials` noiseless trials.
pub fn run_many(program: &Program, trials: usize, seed: u64) -> Result<SimResult, SimError> {
    Simulator::new(program)?.run_many(trials, seed)
}
