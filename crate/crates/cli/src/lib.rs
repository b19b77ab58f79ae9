//! `qflow` command-line driver.
//!
//! [`run`] takes argv and output sinks so the binary and the tests share one
//! code path. Every subcommand returns exit code 0 on success and 1 on any
//! error, with a diagnostic on stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use qflow::allocator::{allocate, allocate_cf_unaware, expected_cost, AllocConfig};
use qflow::cfg::build_cfg_with_default;
use qflow::device::load_device;
use qflow::frontend::{parse_program_named, Program};
use qflow::metrics::{mean, parallel_sso, sample_variance, sso, Histogram};
use qflow::simulator::{SimResult, Simulator};
use qflow::weights::{block_weights, normalized_weights, prune_infinite_loops};

#[derive(Debug, Parser)]
#[command(name = "qflow", version, about = "Control-flow-aware qubit allocation for Quil programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Allocate a program onto a device and print the physical program.
    Compile(CompileArgs),
    /// Print the expected executions of every block.
    Weights(WeightsArgs),
    /// Simulate a program and print its readout histogram as CSV.
    Simulate(SimulateArgs),
    /// Print the squared statistical overlap of two histogram CSVs.
    Compare(CompareArgs),
    /// Print (n, sso) samples of paired independent runs as CSV; per-n
    /// mean and variance go to stderr.
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub device: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub iterations: u64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub restarts: u64,
    /// Uniform block weights and eagerly undone SWAPs.
    #[arg(long)]
    pub cf_unaware: bool,
    #[arg(long, default_value_t = 0.5)]
    pub default_branch_probability: f64,
    /// Write the program here instead of stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub default_branch_probability: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Apply the Pauli noise channel; requires --device.
    #[arg(long)]
    pub noisy: bool,
    #[arg(long)]
    pub device: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    /// Write the histogram here instead of stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Write block frequencies here instead of stderr.
    #[arg(long)]
    pub blocks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub expected: PathBuf,
    pub measured: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    pub input: PathBuf,
    /// Trial counts to sample.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 10, 50, 100, 200])]
    pub trials: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let informational = !e.use_stderr();
            let text = e.render().to_string();
            if informational {
                let _ = write!(stdout, "{text}");
                return 0;
            }
            let _ = write!(stderr, "{text}");
            return 1;
        }
    };
    let result = match &cli.command {
        Command::Compile(a) => cmd_compile(a, stdout, stderr),
        Command::Weights(a) => cmd_weights(a, stdout),
        Command::Simulate(a) => cmd_simulate(a, stdout, stderr),
        Command::Compare(a) => cmd_compare(a, stdout),
        Command::Convergence(a) => cmd_convergence(a, stdout, stderr),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            1
        }
    }
}

fn read_program(path: &Path) -> Result<Program> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let program = parse_program_named(&path.display().to_string(), &text)
        .with_context(|| format!("cannot parse {}", path.display()))?;
    Ok(program)
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        bail!("default branch probability {p} is outside [0, 1]");
    }
    Ok(())
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => stdout.write_all(text.as_bytes()).context("cannot write to stdout"),
    }
}

pub fn cmd_compile(args: &CompileArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    check_probability(args.default_branch_probability)?;
    let program = read_program(&args.input)?;
    let device = load_device(&args.device)?;
    let cfg = build_cfg_with_default(&program, args.default_branch_probability)?.eliminate_dead_code();
    let weights = block_weights(&cfg)?;
    let cfg = prune_infinite_loops(&cfg);
    let config = AllocConfig {
        seed: args.seed,
        iterations: args.iterations as usize,
        restarts: args.restarts as usize,
        ..AllocConfig::default()
    };
    let allocated = if args.cf_unaware {
        allocate_cf_unaware(&cfg, &device, &config)?
    } else {
        allocate(&cfg, &weights, &device, &config)?
    };
    let weighted = expected_cost(&allocated, &weights, &device)?;

    writeln!(stderr, "mode: {}", if args.cf_unaware { "cf-unaware" } else { "cf-aware" })?;
    writeln!(stderr, "expected cost: {weighted:.6}")?;
    writeln!(stderr, "expected fidelity: {:.6}", (-weighted).exp())?;
    writeln!(stderr, "swaps: {}", allocated.swap_count())?;
    writeln!(stderr, "trampolines: {}", allocated.trampolines.len())?;
    let mapping: Vec<String> = allocated
        .entry_mapping
        .iter()
        .map(|(l, p)| format!("{l}->{p}"))
        .collect();
    writeln!(stderr, "entry mapping: {}", mapping.join(" "))?;
    write_output(args.output.as_deref(), &allocated.emit(), stdout)
}

pub fn cmd_weights(args: &WeightsArgs, stdout: &mut dyn Write) -> Result<()> {
    check_probability(args.default_branch_probability)?;
    let program = read_program(&args.input)?;
    let cfg = build_cfg_with_default(&program, args.default_branch_probability)?;
    let weights = block_weights(&cfg)?;
    let normalized = normalized_weights(&weights)?;
    writeln!(stdout, "block,label,weight,normalized")?;
    for b in cfg.blocks() {
        writeln!(
            stdout,
            "{},{},{},{}",
            b.id,
            b.label.as_deref().unwrap_or(""),
            weights.get(b.id).unwrap_or(0.0),
            normalized.get(&b.id).copied().unwrap_or(0.0)
        )?;
    }
    Ok(())
}

fn block_csv(result: &SimResult, sim: &Simulator) -> String {
    let mean = result.mean_visits();
    let norm = result.normalized_frequencies();
    let mut out = String::from("block,mean_visits,normalized\n");
    for b in sim.block_ids() {
        out.push_str(&format!("{b},{},{}\n", mean[b], norm[b]));
    }
    out
}

pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let program = read_program(&args.input)?;
    let sim = Simulator::new(&program)?;
    let result = if args.noisy {
        let Some(path) = &args.device else {
            bail!("--noisy requires --device");
        };
        if !(args.noise_scale >= 0.0) {
            bail!("noise scale must be non-negative");
        }
        let device = load_device(path)?;
        sim.run_noisy(&device, args.trials, args.seed, args.noise_scale)?
    } else {
        sim.run_many(args.trials, args.seed)?
    };
    write_output(args.output.as_deref(), &result.histogram.to_csv(), stdout)?;
    let blocks = block_csv(&result, &sim);
    match &args.blocks {
        Some(p) => fs::write(p, blocks).with_context(|| format!("cannot write {}", p.display()))?,
        None => stderr.write_all(blocks.as_bytes())?,
    }
    Ok(())
}

fn read_histogram(path: &Path) -> Result<Histogram> {
    let file = fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    Histogram::read_csv(file).with_context(|| format!("in {}", path.display()))
}

pub fn cmd_compare(args: &CompareArgs, stdout: &mut dyn Write) -> Result<()> {
    let e = read_histogram(&args.expected)?;
    let m = read_histogram(&args.measured)?;
    writeln!(stdout, "{}", sso(&e, &m)?)?;
    Ok(())
}

pub fn cmd_convergence(args: &ConvergenceArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    if args.trials.iter().any(|&n| n == 0) {
        bail!("trial counts must be positive");
    }
    let program = read_program(&args.input)?;
    let samples = parallel_sso(&program, &args.trials, args.repeats, args.seed)?;
    writeln!(stdout, "n,sso")?;
    for (n, s) in &samples {
        writeln!(stdout, "{n},{s}")?;
    }
    for &n in &args.trials {
        let xs: Vec<f64> = samples.iter().filter(|s| s.0 == n).map(|s| s.1).collect();
        if !xs.is_empty() {
            writeln!(stderr, "n={n} mean={:.6} variance={:.6e}", mean(&xs), sample_variance(&xs))?;
        }
    }
    Ok(())
}
