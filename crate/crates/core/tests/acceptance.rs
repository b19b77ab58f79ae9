//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use qflow::allocator::inverse_swap_edges;
use qflow::device::{load_device, DeviceGraph};
use qflow::metrics::{mean, parallel_sso, r_squared, sample_variance, sso, sso_to_distribution};
use qflow::seed::derive_seed;
use qflow::simulator::{QuantumState, Simulator};
use qflow::weights::{block_weights, normalized_weights, prune_infinite_loops};
use qflow::{build_cfg, compute_dominators, AllocConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

use common::*;

type Outcome = Result<String, String>;

fn aspen() -> DeviceGraph {
    load_device(repo_path("devices/aspen-16.json")).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// R^2 >= 0.90 between normalized weights and normalized block frequencies
/// of 200 runs; the unreachable block is exactly 0 on both sides.
fn block_weight_validation() -> Outcome {
    let start = Instant::now();
    let program = benchmark();
    let cfg = build_cfg(&program).unwrap();
    let predicted = normalized_weights(&block_weights(&cfg).unwrap()).unwrap();
    let sim = Simulator::new(&program).unwrap();
    let observed = sim.run_many(200, 2024).unwrap().normalized_frequencies();

    let c = cfg.blocks().find(|b| b.label.as_deref() == Some("C")).unwrap().id;
    let ids: Vec<_> = cfg.block_ids().collect();
    let p: Vec<f64> = ids.iter().map(|b| predicted[b]).collect();
    let o: Vec<f64> = ids.iter().map(|b| observed[b]).collect();
    let r2 = r_squared(&p, &o).unwrap();
    let elapsed = start.elapsed();
    check(
        r2 >= 0.90 && predicted[&c] == 0.0 && observed[&c] == 0.0 && elapsed < Duration::from_secs(30),
        format!(
            "R^2 = {r2:.4} over {} blocks, C predicted {} observed {}, {:.1?}",
            ids.len(),
            predicted[&c],
            observed[&c],
            elapsed
        ),
    )
}

/// Mean paired SSO at n = 200 >= 0.93 over 20 repeats, and variance at 200
/// below variance at 10.
fn parallel_sso_convergence() -> Outcome {
    let start = Instant::now();
    let samples = parallel_sso(&benchmark(), &[10, 200], 20, 7).unwrap();
    let at = |n: usize| -> Vec<f64> { samples.iter().filter(|s| s.0 == n).map(|s| s.1).collect() };
    let (s10, s200) = (at(10), at(200));
    let (m200, v10, v200) = (mean(&s200), sample_variance(&s10), sample_variance(&s200));
    let elapsed = start.elapsed();
    check(
        m200 >= 0.93 && v200 < v10 && elapsed < Duration::from_secs(300),
        format!("mean SSO(200) = {m200:.4}, var(10) = {v10:.3e}, var(200) = {v200:.3e}, {elapsed:.1?}"),
    )
}

/// Noise-free allocated programs match the ideal 200-trial histogram.
fn functional_equivalence() -> Outcome {
    let program = benchmark();
    let device = aspen();
    let ideal = Simulator::new(&program).unwrap().run_many(200, 11).unwrap().histogram;
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, aware) in [("cf-aware", true), ("cf-unaware", false)] {
        let out = compile(&program, &device, &AllocConfig::default(), aware);
        let h = Simulator::new(&out.program).unwrap().run_many(200, 12).unwrap().histogram;
        let s = sso(&ideal, &h).unwrap();
        ok &= s >= 0.90;
        parts.push(format!("{name} SSO = {s:.4}"));
    }
    check(ok, parts.join(", "))
}

/// Every block of every compiled random program is entered with one
/// SWAP permutation along all paths.
fn routing_invariant() -> Outcome {
    let device = aspen();
    let config = AllocConfig {
        iterations: 300,
        restarts: 1,
        ..AllocConfig::default()
    };
    let mut violations = 0;
    let mut bad = Vec::new();
    let mut swaps = 0;
    let mut trampolines = 0;
    // A line forces routing; Aspen-16 is the shipped topology.
    let line = line_device(6);
    for seed in 0..500u64 {
        let program = random_program(seed, 10, 6);
        for device in [&device, &line] {
            let out = compile(&program, device, &AllocConfig { seed, ..config.clone() }, true);
            swaps += out.swap_count();
            trampolines += out.trampolines.len();
            let v = permutation_conflicts_by_paths(&out.cfg);
            if v > 0 {
                violations += v;
                bad.push(seed);
            }
        }
    }
    check(
        violations == 0,
        format!("{violations} violations (seeds {bad:?}); {swaps} swaps, {trampolines} trampolines checked"),
    )
}

/// inverse_swap_edges equals the set built from path-enumerated dominance.
fn inverse_swap_oracle() -> Outcome {
    let mut mismatches = Vec::new();
    let mut edges = 0;
    for seed in 0..500u64 {
        let cfg = build_cfg(&random_program(10_000 + seed, 10, 4)).unwrap().eliminate_dead_code();
        let tree = compute_dominators(&cfg);
        for b in cfg.block_ids() {
            let got = inverse_swap_edges(&cfg, &tree, b);
            let want = inverse_edges_by_paths(&cfg, b);
            edges += want.len();
            if got != want {
                mismatches.push((seed, b));
            }
        }
    }
    check(
        mismatches.is_empty(),
        format!("{} mismatches {:?}; {edges} edges compared", mismatches.len(), mismatches),
    )
}

/// Dominator sets agree with the intersection over all simple paths.
fn dominator_oracle() -> Outcome {
    let mut mismatches = Vec::new();
    let mut blocks = 0;
    for seed in 0..500u64 {
        let cfg = build_cfg(&random_program(20_000 + seed, 10, 4)).unwrap().eliminate_dead_code();
        let tree = compute_dominators(&cfg);
        let want = dominator_sets_by_paths(&cfg);
        for b in cfg.block_ids() {
            blocks += 1;
            let got: BTreeSet<_> = tree.dominator_chain(b).unwrap().into_iter().collect();
            if got != want[&b] {
                mismatches.push((seed, b));
            }
        }
    }
    check(
        mismatches.is_empty(),
        format!("{} mismatches {:?}; {blocks} blocks compared", mismatches.len(), mismatches),
    )
}

/// Solved weights within 3 standard errors of 10^5-walk Monte Carlo.
fn weight_solver_oracle() -> Outcome {
    let mut misses = Vec::new();
    let mut compared = 0;
    let mut random = 0;
    let mut beyond_two = 0;
    for seed in 0..200u64 {
        let cfg = prune_infinite_loops(&build_cfg(&random_program(30_000 + seed, 8, 3)).unwrap());
        let weights = block_weights(&cfg).unwrap();
        for (b, (m, se)) in monte_carlo_visits(&cfg, 100_000, seed) {
            compared += 1;
            let f = weights.get(b).unwrap();
            if se > 0.0 {
                random += 1;
                beyond_two += usize::from((f - m).abs() > 2.0 * se);
            }
            if (f - m).abs() > (3.0 * se).max(1e-9) {
                misses.push(format!("seed {seed} block {b}: F = {f:.5}, MC = {m:.5} +- {se:.5}"));
            }
        }
    }
    check(
        misses.is_empty(),
        format!(
            "{} of {compared} blocks outside 3 SE {:?}; {beyond_two} of {random} non-degenerate beyond 2 SE",
            misses.len(),
            misses
        ),
    )
}

/// Annealing matches the exhaustive optimum on micro-instances.
fn micro_optimality() -> Outcome {
    let devices = [line_device(4), line_device(5), tee_device()];
    let mut cases = 0;
    let mut misses = Vec::new();
    for seed in 0..40u64 {
        let program = random_program(40_000 + seed, 6, 4);
        let cfg = build_cfg(&program).unwrap().eliminate_dead_code();
        let weights = block_weights(&cfg).unwrap();
        let cfg = prune_infinite_loops(&cfg);
        for (d, device) in devices.iter().enumerate() {
            let got = qflow::allocate(&cfg, &weights, device, &AllocConfig { seed, ..AllocConfig::default() })
                .unwrap()
                .cost;
            let best = brute_force_cost(&cfg, &weights, device);
            cases += 1;
            if (got - best).abs() > 1e-9 * best.max(1.0) {
                misses.push(format!("seed {seed} device {d}: {got} vs {best}"));
            }
        }
    }
    check(misses.is_empty(), format!("{} of {cases} cases off the optimum {:?}", misses.len(), misses))
}

/// Under heterogeneous Pauli noise the CF-aware program is closer to the
/// ideal distribution than the CF-unaware one, by mean and by sign test.
fn directional_noise_benefit() -> Outcome {
    let program = benchmark();
    let device = load_device(repo_path("devices/aspen-16-hetero.json")).unwrap();
    let ideal = Simulator::new(&program).unwrap().exact_distribution(1e-12).unwrap().probabilities;
    let (mut aware, mut unaware) = (Vec::new(), Vec::new());
    for s in 0..20u64 {
        let config = AllocConfig { seed: s, ..AllocConfig::default() };
        let trial_seed = derive_seed(9_000, s);
        for (aware_mode, out) in [(true, &mut aware), (false, &mut unaware)] {
            let compiled = compile(&program, &device, &config, aware_mode);
            let h = Simulator::new(&compiled.program)
                .unwrap()
                .run_noisy(&device, 200, trial_seed, 1.0)
                .unwrap()
                .histogram;
            out.push(sso_to_distribution(&ideal, &h).unwrap());
        }
    }
    let wins = aware.iter().zip(&unaware).filter(|(a, u)| a > u).count() as u64;
    let ties = aware.iter().zip(&unaware).filter(|(a, u)| a == u).count() as u64;
    let n = 20 - ties;
    // One-sided: P(X >= wins) under X ~ Bin(n, 1/2).
    let p = if wins == 0 {
        1.0
    } else {
        1.0 - Binomial::new(0.5, n).unwrap().cdf(wins - 1)
    };
    let (ma, mu) = (mean(&aware), mean(&unaware));
    check(
        ma >= mu && p < 0.05,
        format!("mean SSO aware {ma:.4} vs unaware {mu:.4}; {wins}/{n} wins, sign-test p = {p:.4}"),
    )
}

/// Norm preservation, inverse pairs and Born-rule sampling.
fn simulator_physics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 6;
    let mut state = QuantumState::new(n).unwrap();
    for _ in 0..10_000 {
        let a = rng.gen_range(0..n);
        let b = (a + rng.gen_range(1..n)) % n;
        match rng.gen_range(0..4) {
            0 => state.apply_rx(a, rng.gen_range(-7.0..7.0)).unwrap(),
            1 => state.apply_rz(a, rng.gen_range(-7.0..7.0)).unwrap(),
            2 => state.apply_cz(a, b).unwrap(),
            _ => state.apply_swap(a, b).unwrap(),
        }
    }
    let norm_err = (state.norm_sqr() - 1.0).abs();

    let before = state.clone();
    let dist = |s: &QuantumState| -> f64 {
        s.amplitudes()
            .iter()
            .zip(before.amplitudes())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    };
    let mut inverse_err: f64 = 0.0;
    for q in 0..n {
        let theta = 0.3 + q as f64;
        let mut s = before.clone();
        s.apply_rx(q, theta).unwrap();
        s.apply_rx(q, -theta).unwrap();
        inverse_err = inverse_err.max(dist(&s));
        s.apply_rz(q, theta).unwrap();
        s.apply_rz(q, -theta).unwrap();
        inverse_err = inverse_err.max(dist(&s));
        let r = (q + 1) % n;
        s.apply_cz(q, r).unwrap();
        s.apply_cz(q, r).unwrap();
        s.apply_swap(q, r).unwrap();
        s.apply_swap(q, r).unwrap();
        inverse_err = inverse_err.max(dist(&s));
    }

    // RX(theta)|0> reads 1 with probability sin^2(theta / 2).
    let mut born_ok = true;
    let mut worst: f64 = 0.0;
    for theta in [std::f64::consts::FRAC_PI_2, 1.0, 2.5] {
        let p = (theta / 2.0).sin().powi(2);
        let mut prepared = QuantumState::new(1).unwrap();
        prepared.apply_rx(0, theta).unwrap();
        let samples = 10_000;
        let ones = (0..samples)
            .filter(|_| prepared.clone().measure(0, &mut rng).unwrap())
            .count() as f64;
        let sigma = (samples as f64 * p * (1.0 - p)).sqrt();
        let z = (ones - samples as f64 * p).abs() / sigma;
        worst = worst.max(z);
        born_ok &= z <= 3.0;
    }
    check(
        norm_err <= 1e-9 && inverse_err <= 1e-9 && born_ok,
        format!("norm error {norm_err:.2e}, inverse-pair error {inverse_err:.2e}, worst Born |z| = {worst:.2}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 block-weight validation", block_weight_validation),
        ("2 parallel-SSO convergence", parallel_sso_convergence),
        ("3 functional equivalence", functional_equivalence),
        ("4 routing invariant", routing_invariant),
        ("5 inverse-swap rule oracle", inverse_swap_oracle),
        ("6 dominator oracle", dominator_oracle),
        ("7 weight-solver oracle", weight_solver_oracle),
        ("8 micro-optimality", micro_optimality),
        ("9 directional noise benefit", directional_noise_benefit),
        ("10 simulator physics", simulator_physics),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if let Some(pat) = &filter {
            if !name.contains(pat.as_str()) {
                continue;
            }
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
