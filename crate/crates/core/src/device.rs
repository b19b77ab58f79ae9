//! Target hardware: physical qubits, permitted two-qubit edges and their
//! fidelities.
//!
//! Device files are JSON:
//!
//! ```json
//! {
//!   "qubits": [0, 1, 2],
//!   "edges": [{"pair": [0, 1], "fidelity": 0.98}, {"pair": [1, 2], "fidelity": 0.95}],
//!   "single_qubit_fidelity": {"0": 0.999},
//!   "readout_fidelity": {"2": 0.97}
//! }
//! ```
//!
//! Missing single-qubit and readout entries default to 1.0.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::frontend::Qubit;

#[derive(Debug, thiserror::Error)]
pub enum DeviceError {
    #[error("cannot read device file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed device description: {0}")]
    Format(String),
    #[error("device has no qubits")]
    Empty,
    #[error("qubit {0} listed twice")]
    DuplicateQubit(Qubit),
    #[error("edge ({0}, {1}) listed twice")]
    DuplicateEdge(Qubit, Qubit),
    #[error("edge ({0}, {1}) connects a qubit to itself")]
    SelfEdge(Qubit, Qubit),
    #[error("unknown qubit {0}")]
    UnknownQubit(Qubit),
    #[error("fidelity {value} for {what} is outside (0, 1]")]
    FidelityOutOfRange { what: String, value: f64 },
    #[error("device graph is disconnected; qubit {0} cannot be reached")]
    Disconnected(Qubit),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeSpec {
    pair: [Qubit; 2],
    fidelity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceFile {
    qubits: Vec<Qubit>,
    edges: Vec<EdgeSpec>,
    #[serde(default)]
    single_qubit_fidelity: BTreeMap<String, f64>,
    #[serde(default)]
    readout_fidelity: BTreeMap<String, f64>,
}

/// A connected coupling graph with all-pairs routing paths precomputed.
///
/// Internally qubits are addressed by dense indices (position in the sorted
/// qubit list); the public API speaks physical ids.
#[derive(Debug, Clone)]
pub struct DeviceGraph {
    qubits: Vec<Qubit>,
    index: BTreeMap<Qubit, usize>,
    edges: BTreeMap<(Qubit, Qubit), f64>,
    single: Vec<f64>,
    readout: Vec<f64>,
    /// Row-major `n x n` edge fidelity, 0 where no edge exists.
    edge_fid: Vec<f64>,
    /// `paths[a * n + b]`: dense path from `a` to `b`.
    paths: Vec<Vec<usize>>,
    costs: Vec<f64>,
}

fn check_fidelity(what: impl FnOnce() -> String, value: f64) -> Result<(), DeviceError> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(DeviceError::FidelityOutOfRange {
            what: what(),
            value,
        })
    }
}

impl DeviceGraph {
    pub fn new(
        qubits: &[Qubit],
        edges: &[(Qubit, Qubit, f64)],
        single_qubit_fidelity: &BTreeMap<Qubit, f64>,
        readout_fidelity: &BTreeMap<Qubit, f64>,
    ) -> Result<Self, DeviceError> {
        if qubits.is_empty() {
            return Err(DeviceError::Empty);
        }
        let mut sorted = qubits.to_vec();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(DeviceError::DuplicateQubit(w[0]));
        }
        let index: BTreeMap<Qubit, usize> =
            sorted.iter().enumerate().map(|(i, &q)| (q, i)).collect();
        let n = sorted.len();

        let mut edge_map = BTreeMap::new();
        let mut edge_fid = vec![0.0; n * n];
        for &(a, b, f) in edges {
            if a == b {
                return Err(DeviceError::SelfEdge(a, b));
            }
            let ia = *index.get(&a).ok_or(DeviceError::UnknownQubit(a))?;
            let ib = *index.get(&b).ok_or(DeviceError::UnknownQubit(b))?;
            check_fidelity(|| format!("edge ({a}, {b})"), f)?;
            if edge_map.insert((a.min(b), a.max(b)), f).is_some() {
                return Err(DeviceError::DuplicateEdge(a, b));
            }
            edge_fid[ia * n + ib] = f;
            edge_fid[ib * n + ia] = f;
        }

        let per_qubit = |map: &BTreeMap<Qubit, f64>, kind: &str| -> Result<Vec<f64>, DeviceError> {
            let mut v = vec![1.0; n];
            for (&q, &f) in map {
                let i = *index.get(&q).ok_or(DeviceError::UnknownQubit(q))?;
                check_fidelity(|| format!("{kind} of qubit {q}"), f)?;
                v[i] = f;
            }
            Ok(v)
        };
        let single = per_qubit(single_qubit_fidelity, "single-qubit fidelity")?;
        let readout = per_qubit(readout_fidelity, "readout fidelity")?;

        let mut device = Self {
            qubits: sorted,
            index,
            edges: edge_map,
            single,
            readout,
            edge_fid,
            paths: Vec::new(),
            costs: Vec::new(),
        };
        device.precompute_paths()?;
        Ok(device)
    }

    /// Device with default (perfect) single-qubit and readout fidelities.
    pub fn from_edges(qubits: &[Qubit], edges: &[(Qubit, Qubit, f64)]) -> Result<Self, DeviceError> {
        Self::new(qubits, edges, &BTreeMap::new(), &BTreeMap::new())
    }

    pub fn from_json(text: &str) -> Result<Self, DeviceError> {
        let file: DeviceFile =
            serde_json::from_str(text).map_err(|e| DeviceError::Format(e.to_string()))?;
        let parse_map = |m: &BTreeMap<String, f64>| -> Result<BTreeMap<Qubit, f64>, DeviceError> {
            m.iter()
                .map(|(k, &v)| {
                    k.parse::<Qubit>()
                        .map(|q| (q, v))
                        .map_err(|_| DeviceError::Format(format!("invalid qubit key `{k}`")))
                })
                .collect()
        };
        let edges: Vec<(Qubit, Qubit, f64)> = file
            .edges
            .iter()
            .map(|e| (e.pair[0], e.pair[1], e.fidelity))
            .collect();
        Self::new(
            &file.qubits,
            &edges,
            &parse_map(&file.single_qubit_fidelity)?,
            &parse_map(&file.readout_fidelity)?,
        )
    }

    pub fn to_json(&self) -> String {
        let file = DeviceFile {
            qubits: self.qubits.clone(),
            edges: self
                .edges
                .iter()
                .map(|(&(a, b), &fidelity)| EdgeSpec {
                    pair: [a, b],
                    fidelity,
                })
                .collect(),
            single_qubit_fidelity: self
                .qubits
                .iter()
                .zip(&self.single)
                .map(|(q, &f)| (q.to_string(), f))
                .collect(),
            readout_fidelity: self
                .qubits
                .iter()
                .zip(&self.readout)
                .map(|(q, &f)| (q.to_string(), f))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("device serializes")
    }

    pub fn qubits(&self) -> &[Qubit] {
        &self.qubits
    }

    pub fn num_qubits(&self) -> usize {
        self.qubits.len()
    }

    pub fn contains(&self, q: Qubit) -> bool {
        self.index.contains_key(&q)
    }

    /// Edges as `(low, high)` pairs with their fidelity.
    pub fn edges(&self) -> impl Iterator<Item = ((Qubit, Qubit), f64)> + '_ {
        self.edges.iter().map(|(&e, &f)| (e, f))
    }

    pub fn edge_fidelity(&self, a: Qubit, b: Qubit) -> Option<f64> {
        self.edges.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn is_edge(&self, a: Qubit, b: Qubit) -> bool {
        self.edge_fidelity(a, b).is_some()
    }

    /// Single-qubit gate fidelity; 1.0 for qubits outside the device.
    pub fn single_qubit_fidelity(&self, q: Qubit) -> f64 {
        self.index.get(&q).map_or(1.0, |&i| self.single[i])
    }

    /// Readout fidelity; 1.0 for qubits outside the device.
    pub fn readout_fidelity(&self, q: Qubit) -> f64 {
        self.index.get(&q).map_or(1.0, |&i| self.readout[i])
    }

    /// Minimum-cost path under edge cost `-ln f`, ties broken by the
    /// lexicographically smallest qubit sequence.
    pub fn shortest_swap_path(&self, a: Qubit, b: Qubit) -> Result<(Vec<Qubit>, f64), DeviceError> {
        let ia = *self.index.get(&a).ok_or(DeviceError::UnknownQubit(a))?;
        let ib = *self.index.get(&b).ok_or(DeviceError::UnknownQubit(b))?;
        let n = self.qubits.len();
        let path = self.paths[ia * n + ib]
            .iter()
            .map(|&i| self.qubits[i])
            .collect();
        Ok((path, self.costs[ia * n + ib]))
    }

    pub(crate) fn dense(&self, q: Qubit) -> Option<usize> {
        self.index.get(&q).copied()
    }

    pub(crate) fn qubit_at(&self, i: usize) -> Qubit {
        self.qubits[i]
    }

    pub(crate) fn dense_path(&self, a: usize, b: usize) -> &[usize] {
        &self.paths[a * self.qubits.len() + b]
    }

    pub(crate) fn dense_edge_fidelity(&self, a: usize, b: usize) -> f64 {
        self.edge_fid[a * self.qubits.len() + b]
    }

    /// Summed `-ln f` along the routing path between two dense indices.
    pub(crate) fn dense_cost(&self, a: usize, b: usize) -> f64 {
        self.costs[a * self.qubits.len() + b]
    }

    pub(crate) fn dense_single(&self, i: usize) -> f64 {
        self.single[i]
    }

    pub(crate) fn dense_readout(&self, i: usize) -> f64 {
        self.readout[i]
    }

    fn precompute_paths(&mut self) -> Result<(), DeviceError> {
        let n = self.qubits.len();
        self.paths = vec![Vec::new(); n * n];
        self.costs = vec![f64::INFINITY; n * n];
        for src in 0..n {
            let labels = self.dijkstra(src);
            for (dst, label) in labels.into_iter().enumerate() {
                match label {
                    Some((cost, path)) => {
                        self.costs[src * n + dst] = cost;
                        self.paths[src * n + dst] = path;
                    }
                    None => return Err(DeviceError::Disconnected(self.qubits[dst])),
                }
            }
        }
        // Summation order differs by direction; keep costs exactly symmetric.
        for a in 0..n {
            for b in 0..a {
                self.costs[a * n + b] = self.costs[b * n + a];
            }
        }
        Ok(())
    }

    /// Array-based Dijkstra; labels compare by cost, then lexicographically
    /// by the path's physical ids.
    fn dijkstra(&self, src: usize) -> Vec<Option<(f64, Vec<usize>)>> {
        let n = self.qubits.len();
        let mut labels: Vec<Option<(f64, Vec<usize>)>> = vec![None; n];
        let mut settled = vec![false; n];
        labels[src] = Some((0.0, vec![src]));
        loop {
            let next = (0..n)
                .filter(|&i| !settled[i])
                .filter_map(|i| labels[i].as_ref().map(|l| (i, l)))
                .min_by(|(_, x), (_, y)| self.compare_labels(x, y))
                .map(|(i, _)| i);
            let Some(u) = next else { break };
            settled[u] = true;
            let (cost_u, path_u) = labels[u].clone().expect("settled node has a label");
            for v in 0..n {
                let f = self.edge_fid[u * n + v];
                if f == 0.0 || settled[v] {
                    continue;
                }
                let mut path = path_u.clone();
                path.push(v);
                let candidate = (cost_u - f.ln(), path);
                let better = match &labels[v] {
                    None => true,
                    Some(cur) => self.compare_labels(&candidate, cur).is_lt(),
                };
                if better {
                    labels[v] = Some(candidate);
                }
            }
        }
        labels
    }

    fn compare_labels(&self, x: &(f64, Vec<usize>), y: &(f64, Vec<usize>)) -> std::cmp::Ordering {
        if (x.0 - y.0).abs() > 1e-12 {
            return x.0.total_cmp(&y.0);
        }
        // Dense indices follow sorted physical ids, so index order is id order.
        x.1.cmp(&y.1)
    }

    /// Connected components check used by tests and validation.
    pub fn is_connected(&self) -> bool {
        let n = self.qubits.len();
        let mut seen = BTreeSet::from([0usize]);
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if self.edge_fid[u * n + v] > 0.0 && seen.insert(v) {
                    stack.push(v);
                }
            }
        }
        seen.len() == n
    }
}

pub fn load_device(path: impl AsRef<Path>) -> Result<DeviceGraph, DeviceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DeviceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    DeviceGraph::from_json(&text)
}
