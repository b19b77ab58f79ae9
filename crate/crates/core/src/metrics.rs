//! Outcome histograms and the statistics used to compare them.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::frontend::Program;
use crate::seed::derive_seed;
use crate::simulator::{SimError, Simulator};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("histogram has no trials")]
    EmptyHistogram,
    #[error("length mismatch: {predicted} predicted vs {observed} observed values")]
    LengthMismatch { predicted: usize, observed: usize },
    #[error("observed values have zero variance")]
    ZeroVariance,
    #[error("malformed histogram CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<csv::Error> for MetricsError {
    fn from(e: csv::Error) -> Self {
        MetricsError::Csv(e.to_string())
    }
}

/// Counts of readout bitstrings over a number of trials.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Histogram {
    counts: BTreeMap<String, u64>,
    trials: u64,
}

impl Histogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: BTreeMap<String, u64>) -> Self {
        let trials = counts.values().sum();
        let counts = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        Self { counts, trials }
    }

    pub fn record(&mut self, bits: impl Into<String>) {
        *self.counts.entry(bits.into()).or_insert(0) += 1;
        self.trials += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (k, &c) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += c;
        }
        self.trials += other.trials;
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn count(&self, bits: &str) -> u64 {
        self.counts.get(bits).copied().unwrap_or(0)
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn probability(&self, bits: &str) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.count(bits) as f64 / self.trials as f64
        }
    }

    pub fn probabilities(&self) -> BTreeMap<String, f64> {
        self.counts
            .keys()
            .map(|k| (k.clone(), self.probability(k)))
            .collect()
    }

    /// Writes `bitstring,count` rows with a header, sorted by bitstring.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bitstring", "count"])?;
        for (k, c) in &self.counts {
            out.write_record([k.as_str(), &c.to_string()])?;
        }
        out.flush().map_err(|e| MetricsError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, MetricsError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut counts = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(MetricsError::Csv(format!("expected 2 fields, got {}", rec.len())));
            }
            let bits = rec[0].trim();
            if !bits.chars().all(|c| c == '0' || c == '1') {
                return Err(MetricsError::Csv(format!("not a bitstring: {bits:?}")));
            }
            let c: u64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| MetricsError::Csv(format!("bad count {:?}", &rec[1])))?;
            *counts.entry(bits.to_string()).or_insert(0) += c;
        }
        Ok(Self::from_counts(counts))
    }

    pub fn from_csv_str(text: &str) -> Result<Self, MetricsError> {
        Self::read_csv(text.as_bytes())
    }
}

/// Squared statistical overlap `(sum_j sqrt(e_j m_j))^2` over the union of
/// observed outcomes.
pub fn sso(expected: &Histogram, measured: &Histogram) -> Result<f64, MetricsError> {
    if expected.trials == 0 || measured.trials == 0 {
        return Err(MetricsError::EmptyHistogram);
    }
    // Keys present in only one histogram contribute zero.
    let (small, large) = if expected.counts.len() <= measured.counts.len() {
        (expected, measured)
    } else {
        (measured, expected)
    };
    let s: f64 = small
        .counts
        .iter()
        .map(|(k, &c)| (c as f64 * large.count(k) as f64).sqrt())
        .sum();
    let norm = (expected.trials as f64 * measured.trials as f64).sqrt();
    Ok(((s / norm) * (s / norm)).clamp(0.0, 1.0))
}

/// SSO of a histogram against exact expected probabilities.
pub fn sso_to_distribution(expected: &BTreeMap<String, f64>, measured: &Histogram) -> Result<f64, MetricsError> {
    if measured.trials == 0 {
        return Err(MetricsError::EmptyHistogram);
    }
    let total: f64 = expected.values().sum();
    if total <= 0.0 {
        return Err(MetricsError::EmptyHistogram);
    }
    let s: f64 = expected
        .iter()
        .map(|(k, &e)| (e / total * measured.probability(k)).sqrt())
        .sum();
    Ok((s * s).clamp(0.0, 1.0))
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(predicted: &[f64], observed: &[f64]) -> Result<f64, MetricsError> {
    if predicted.len() != observed.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            observed: observed.len(),
        });
    }
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let ss_tot: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    if observed.is_empty() || ss_tot == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let ss_res: f64 = predicted
        .iter()
        .zip(observed)
        .map(|(p, o)| (o - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mutual SSO of two independent `n`-trial runs, `repeats` times per `n`.
/// Returns `(n, sso)` samples grouped by `n` in the order given.
pub fn parallel_sso(
    program: &Program,
    trials: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>, MetricsError> {
    let sim = Simulator::new(program)?;
    let jobs: Vec<(usize, usize, usize)> = trials
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..repeats).map(move |r| (i, n, r)))
        .collect();
    jobs.par_iter()
        .map(|&(i, n, r)| {
            let base = derive_seed(seed, (i * repeats + r) as u64);
            let a = sim.run_many(n, derive_seed(base, 0))?;
            let b = sim.run_many(n, derive_seed(base, 1))?;
            Ok((n, sso(&a.histogram, &b.histogram)?))
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}
