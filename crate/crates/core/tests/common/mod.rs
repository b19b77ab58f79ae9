//! Shared generators and brute-force oracles for integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use qflow::allocator::route_with_mapping;
use qflow::cfg::{BlockId, ControlFlowGraph};
use qflow::device::DeviceGraph;
use qflow::frontend::{parse_program, GateKind, Instruction, Program, Qubit};
use qflow::weights::BlockWeights;
use qflow::Allocation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn benchmark() -> Program {
    let text = std::fs::read_to_string(repo_path("benchmarks/cf-bench.quil")).unwrap();
    parse_program(&text).unwrap()
}

fn random_gate(rng: &mut ChaCha8Rng, nq: u32, allow_swap: bool, text: &mut String) {
    let q = rng.gen_range(0..nq);
    match rng.gen_range(0..6) {
        0 => writeln!(text, "RX(pi) {q}"),
        1 => writeln!(text, "RX(pi/2) {q}"),
        2 => writeln!(text, "RX(-pi/2) {q}"),
        3 => writeln!(text, "RZ({:.3}) {q}", rng.gen_range(-3.0..3.0)),
        _ => {
            let mut r = rng.gen_range(0..nq - 1);
            if r >= q {
                r += 1;
            }
            if allow_swap && rng.gen_bool(0.2) {
                writeln!(text, "SWAP {q} {r}")
            } else {
                writeln!(text, "CZ {q} {r}")
            }
        }
    }
    .unwrap();
}

/// Random labelled program with at most `max_blocks` blocks over
/// `2..=max_qubits` qubits. Branches test freshly measured bits; some carry
/// a probability pragma (including 0 and 1). Loops, unreachable blocks
/// and loops that never reach `HALT` all occur. No source-level SWAPs, so
/// every SWAP in compiled output comes from routing.
pub fn random_program(seed: u64, max_blocks: usize, max_qubits: u32) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = rng.gen_range(1..=max_blocks);
    let nq = rng.gen_range(2..=max_qubits);
    let mut text = format!("DECLARE ro BIT[{nb}]\n");
    for i in 0..nb {
        writeln!(text, "LABEL @L{i}").unwrap();
        for _ in 0..rng.gen_range(0..=4) {
            random_gate(&mut rng, nq, false, &mut text);
        }
        let last = i + 1 == nb;
        let target = rng.gen_range(0..nb);
        match rng.gen_range(0..10) {
            0 | 1 => text.push_str("HALT\n"),
            2 | 3 => writeln!(text, "JUMP @L{target}").unwrap(),
            4..=7 if !last => {
                writeln!(text, "MEASURE {} ro[{i}]", rng.gen_range(0..nq)).unwrap();
                if rng.gen_bool(0.3) {
                    let p = [0.0, 0.25, 0.5, 0.75, 1.0][rng.gen_range(0..5)];
                    writeln!(text, "PRAGMA BRANCH_PROBABILITY {p}").unwrap();
                }
                let kw = if rng.gen_bool(0.5) { "JUMP-WHEN" } else { "JUMP-UNLESS" };
                writeln!(text, "{kw} @L{target} ro[{i}]").unwrap();
            }
            _ if last => text.push_str("HALT\n"),
            _ => {}
        }
    }
    parse_program(&text).unwrap_or_else(|e| panic!("generated program invalid: {e}\n{text}"))
}

/// Random program whose branches only test bits that are never measured,
/// with forward-only jumps, ending in measurements of every qubit. Every
/// execution is deterministic in its control flow and terminates.
pub fn random_branch_free_program(seed: u64, max_blocks: usize, max_qubits: u32) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = rng.gen_range(1..=max_blocks);
    let nq = rng.gen_range(2..=max_qubits);
    let mut text = format!("DECLARE ro BIT[{nq}]\nDECLARE flag BIT\n");
    for i in 0..nb {
        writeln!(text, "LABEL @L{i}").unwrap();
        for _ in 0..rng.gen_range(0..=5) {
            random_gate(&mut rng, nq, true, &mut text);
        }
        if i + 1 == nb {
            break;
        }
        let target = rng.gen_range(i + 1..nb);
        match rng.gen_range(0..3) {
            0 => writeln!(text, "JUMP @L{target}").unwrap(),
            1 => {
                let kw = if rng.gen_bool(0.5) { "JUMP-WHEN" } else { "JUMP-UNLESS" };
                writeln!(text, "{kw} @L{target} flag[0]").unwrap();
            }
            _ => {}
        }
    }
    for q in 0..nq {
        writeln!(text, "MEASURE {q} ro[{q}]").unwrap();
    }
    text.push_str("HALT\n");
    parse_program(&text).unwrap()
}

/// Calls `visit(path)` for every simple path from the entry, `path` ending
/// at the current block.
pub fn for_each_simple_path(cfg: &ControlFlowGraph, visit: impl FnMut(&[BlockId])) {
    for_each_simple_path_from(cfg, cfg.entry(), visit);
}

pub fn for_each_simple_path_from(cfg: &ControlFlowGraph, start: BlockId, mut visit: impl FnMut(&[BlockId])) {
    fn go(
        cfg: &ControlFlowGraph,
        path: &mut Vec<BlockId>,
        on_path: &mut BTreeSet<BlockId>,
        visit: &mut dyn FnMut(&[BlockId]),
    ) {
        visit(path);
        let here = *path.last().unwrap();
        let mut succ = cfg.successor_ids(here);
        succ.dedup();
        for s in succ {
            if on_path.insert(s) {
                path.push(s);
                go(cfg, path, on_path, visit);
                path.pop();
                on_path.remove(&s);
            }
        }
    }
    let mut path = vec![start];
    let mut on_path = BTreeSet::from([start]);
    go(cfg, &mut path, &mut on_path, &mut visit);
}

/// Dominator sets as the intersection of the blocks on every simple path
/// from the entry.
pub fn dominator_sets_by_paths(cfg: &ControlFlowGraph) -> BTreeMap<BlockId, BTreeSet<BlockId>> {
    let mut doms: BTreeMap<BlockId, BTreeSet<BlockId>> = BTreeMap::new();
    for_each_simple_path(cfg, |path| {
        let b = *path.last().unwrap();
        let on: BTreeSet<BlockId> = path.iter().copied().collect();
        doms.entry(b)
            .and_modify(|d| *d = d.intersection(&on).copied().collect())
            .or_insert(on);
    });
    doms
}

/// Inverse-SWAP edges of `b` from path-derived dominance.
pub fn inverse_edges_by_paths(cfg: &ControlFlowGraph, b: BlockId) -> BTreeSet<(BlockId, BlockId)> {
    let doms = dominator_sets_by_paths(cfg);
    let dominates = |a: BlockId, x: BlockId| doms[&x].contains(&a);
    cfg.edges()
        .into_iter()
        .filter(|e| dominates(b, e.from) && !(b != e.to && dominates(b, e.to)))
        .map(|e| (e.from, e.to))
        .collect()
}

/// Position -> token after the SWAPs of a block, fixed points omitted.
fn apply_block_swaps(cfg: &ControlFlowGraph, b: BlockId, perm: &mut BTreeMap<Qubit, Qubit>) {
    for instr in &cfg.block(b).unwrap().instructions {
        if let Instruction::Gate(g) = instr {
            if g.kind == GateKind::Swap {
                let (x, y) = (g.qubits[0], g.qubits[1]);
                let tx = perm.get(&x).copied().unwrap_or(x);
                let ty = perm.get(&y).copied().unwrap_or(y);
                perm.insert(x, ty);
                perm.insert(y, tx);
            }
        }
    }
    perm.retain(|k, v| k != v);
}

/// Number of blocks reached with more than one distinct SWAP permutation,
/// over every simple path and every edge leaving it (back edges included).
pub fn permutation_conflicts_by_paths(cfg: &ControlFlowGraph) -> usize {
    let mut seen: BTreeMap<BlockId, BTreeSet<Vec<(Qubit, Qubit)>>> = BTreeMap::new();
    seen.entry(cfg.entry()).or_default().insert(Vec::new());
    for_each_simple_path(cfg, |path| {
        let mut perm = BTreeMap::new();
        for &b in path {
            apply_block_swaps(cfg, b, &mut perm);
        }
        let key: Vec<(Qubit, Qubit)> = perm.into_iter().collect();
        for s in cfg.successor_ids(*path.last().unwrap()) {
            seen.entry(s).or_default().insert(key.clone());
        }
    });
    seen.values().filter(|v| v.len() > 1).count()
}

/// Monte Carlo estimate of expected executions: random walks over the
/// non-suppressed edges. Probability mass on suppressed edges ends the
/// walk. Returns per-block (mean, standard error).
pub fn monte_carlo_visits(cfg: &ControlFlowGraph, walks: usize, seed: u64) -> BTreeMap<BlockId, (f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suppressed = cfg.suppressed_edges();
    let succ: BTreeMap<BlockId, Vec<(BlockId, f64)>> = cfg
        .block_ids()
        .map(|b| {
            let out = cfg
                .successors(b)
                .into_iter()
                .filter(|e| !suppressed.contains(&(e.from, e.to)))
                .map(|e| (e.to, e.probability))
                .collect();
            (b, out)
        })
        .collect();
    let ids: Vec<BlockId> = cfg.block_ids().collect();
    let mut sum: BTreeMap<BlockId, f64> = ids.iter().map(|&b| (b, 0.0)).collect();
    let mut sum_sq = sum.clone();
    let mut count: BTreeMap<BlockId, u64> = BTreeMap::new();
    for _ in 0..walks {
        count.clear();
        let mut b = cfg.entry();
        let mut steps = 0u64;
        loop {
            *count.entry(b).or_insert(0) += 1;
            steps += 1;
            assert!(steps < 10_000_000, "walk did not terminate");
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut next = None;
            for &(t, p) in &succ[&b] {
                acc += p;
                if u < acc {
                    next = Some(t);
                    break;
                }
            }
            match next {
                Some(t) => b = t,
                None => break,
            }
        }
        for (&b, &c) in &count {
            let c = c as f64;
            *sum.get_mut(&b).unwrap() += c;
            *sum_sq.get_mut(&b).unwrap() += c * c;
        }
    }
    let n = walks as f64;
    ids.iter()
        .map(|b| {
            let mean = sum[b] / n;
            let var = (sum_sq[b] / n - mean * mean).max(0.0) * n / (n - 1.0);
            (*b, (mean, (var / n).sqrt()))
        })
        .collect()
}

/// Every injective map of `logicals` into the device qubits.
pub fn all_injections(logicals: &[Qubit], physical: &[Qubit]) -> Vec<Allocation> {
    fn go(
        logicals: &[Qubit],
        physical: &[Qubit],
        used: &mut Vec<bool>,
        cur: &mut Vec<(Qubit, Qubit)>,
        out: &mut Vec<Allocation>,
    ) {
        if cur.len() == logicals.len() {
            out.push(Allocation::from_pairs(cur.iter().copied()).unwrap());
            return;
        }
        let l = logicals[cur.len()];
        for (i, &p) in physical.iter().enumerate() {
            if !used[i] {
                used[i] = true;
                cur.push((l, p));
                go(logicals, physical, used, cur, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(logicals, physical, &mut vec![false; physical.len()], &mut Vec::new(), &mut out);
    out
}

/// Exhaustive optimum of the routed cost over all entry mappings.
pub fn brute_force_cost(cfg: &ControlFlowGraph, weights: &BlockWeights, device: &DeviceGraph) -> f64 {
    let logicals = qflow::allocator::logical_qubits(cfg);
    all_injections(&logicals, device.qubits())
        .iter()
        .map(|m| route_with_mapping(cfg, weights, device, m).unwrap().cost)
        .fold(f64::INFINITY, f64::min)
}

/// Line of `n` qubits with fidelities cycling through a fixed pattern.
pub fn line_device(n: u32) -> DeviceGraph {
    let pattern = [0.97, 0.9, 0.99, 0.93, 0.95];
    let q: Vec<Qubit> = (0..n).collect();
    let e: Vec<(Qubit, Qubit, f64)> = (0..n - 1).map(|i| (i, i + 1, pattern[i as usize % 5])).collect();
    DeviceGraph::new(
        &q,
        &e,
        &(0..n).map(|i| (i, 0.999 - 0.001 * (i % 3) as f64)).collect(),
        &(0..n).map(|i| (i, 0.98 - 0.01 * (i % 2) as f64)).collect(),
    )
    .unwrap()
}

/// Five-qubit T: a line 0-1-2-3 with 4 hanging off 1.
pub fn tee_device() -> DeviceGraph {
    DeviceGraph::from_edges(
        &[0, 1, 2, 3, 4],
        &[(0, 1, 0.95), (1, 2, 0.9), (2, 3, 0.98), (1, 4, 0.92)],
    )
    .unwrap()
}

/// The compile pipeline: dead-code elimination, weights, loop pruning,
/// then allocation.
pub fn compile(
    program: &Program,
    device: &DeviceGraph,
    config: &qflow::AllocConfig,
    cf_aware: bool,
) -> qflow::AllocatedProgram {
    let cfg = qflow::build_cfg(program).unwrap().eliminate_dead_code();
    let weights = qflow::block_weights(&cfg).unwrap();
    let cfg = qflow::weights::prune_infinite_loops(&cfg);
    if cf_aware {
        qflow::allocate(&cfg, &weights, device, config).unwrap()
    } else {
        qflow::allocate_cf_unaware(&cfg, device, config).unwrap()
    }
}
