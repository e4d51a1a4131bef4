//! Observation networks, private-signal variances and the state environment.
//!
//! An edge `i -> j` means node `i` observes the past actions of node `j`.
//! All generators are deterministic functions of their inputs and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Persistence and memory depth of the environment. The innovation variance
/// of the state is normalized to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    rho: f64,
    memory: usize,
}

impl Environment {
    pub fn new(rho: f64, memory: usize) -> Result<Self> {
        if !rho.is_finite() || rho.abs() > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "rho must satisfy |rho| <= 1, got {rho}"
            )));
        }
        if memory == 0 {
            return Err(Error::InvalidParameter("memory must be at least 1".into()));
        }
        Ok(Self { rho, memory })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn innovation_var(&self) -> f64 {
        1.0
    }
}

/// Per-node private signal noise variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalProfile {
    sigma2: Vec<f64>,
}

impl SignalProfile {
    pub fn new(sigma2: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = sigma2
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "signal variance of node {i} must be positive and finite, got {v}"
            )));
        }
        Ok(Self { sigma2 })
    }

    pub fn uniform(n: usize, sigma2: f64) -> Result<Self> {
        Self::new(vec![sigma2; n])
    }

    pub fn len(&self) -> usize {
        self.sigma2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma2.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn get(&self, i: usize) -> f64 {
        self.sigma2[i]
    }

    pub fn precision(&self, i: usize) -> f64 {
        1.0 / self.sigma2[i]
    }

    /// Returns a copy with node `i`'s variance replaced.
    pub fn with_value(&self, i: usize, sigma2: f64) -> Result<Self> {
        let mut values = self.sigma2.clone();
        values[i] = sigma2;
        Self::new(values)
    }
}

/// Directed observation network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    neighbors: Vec<Vec<usize>>,
    includes_self: Vec<bool>,
    undirected: bool,
    node_class: Option<Vec<(usize, usize)>>,
    labels: Option<Vec<i64>>,
}

impl Network {
    /// Builds a network from neighbor lists. `includes_self[i]` is derived
    /// from whether `i` appears in its own list.
    pub fn new(neighbors: Vec<Vec<usize>>, undirected: bool) -> Result<Self> {
        let includes_self = neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| nb.contains(&i))
            .collect();
        let net = Self {
            neighbors,
            includes_self,
            undirected,
            node_class: None,
            labels: None,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let n = self.neighbors.len();
        if n == 0 {
            return Err(Error::InvalidNetwork("network has no nodes".into()));
        }
        for (i, nb) in self.neighbors.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for &j in nb {
                if j >= n {
                    return Err(Error::InvalidNetwork(format!(
                        "node {i} observes out-of-range node {j}"
                    )));
                }
                if !seen.insert(j) {
                    return Err(Error::InvalidNetwork(format!(
                        "node {i} lists neighbor {j} twice"
                    )));
                }
            }
            if seen.contains(&i) != self.includes_self[i] {
                return Err(Error::InvalidNetwork(format!(
                    "self-observation flag of node {i} disagrees with its neighbor list"
                )));
            }
        }
        if self.undirected {
            for (i, nb) in self.neighbors.iter().enumerate() {
                for &j in nb {
                    if j != i && !self.neighbors[j].contains(&i) {
                        return Err(Error::InvalidNetwork(format!(
                            "undirected network has {i}->{j} without {j}->{i}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn includes_self(&self, i: usize) -> bool {
        self.includes_self[i]
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    pub fn node_class(&self) -> Option<&[(usize, usize)]> {
        self.node_class.as_deref()
    }

    /// Original node ids, when the network was read from a file.
    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn mean_degree(&self) -> f64 {
        let total: usize = self.neighbors.iter().map(Vec::len).sum();
        total as f64 / self.n() as f64
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].contains(&j)
    }

    /// Attaches `(network type, signal type)` labels to every node.
    pub fn with_node_class(mut self, class: Vec<(usize, usize)>) -> Result<Self> {
        if class.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} node classes for {} nodes",
                class.len(),
                self.n()
            )));
        }
        self.node_class = Some(class);
        Ok(self)
    }

    /// Dense index of an original file id.
    pub fn index_of_label(&self, label: i64) -> Option<usize> {
        self.labels
            .as_ref()
            .and_then(|l| l.binary_search(&label).ok())
    }
}

/// Every node observes every other node, and itself iff `include_self`.
pub fn gen_complete(n: usize, include_self: bool) -> Result<Network> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let neighbors = (0..n)
        .map(|i| (0..n).filter(|&j| include_self || j != i).collect())
        .collect();
    Network::new(neighbors, true)
}

/// Undirected cycle.
pub fn gen_circle(n: usize) -> Result<Network> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "circle needs at least 3 nodes, got {n}"
        )));
    }
    let neighbors = (0..n)
        .map(|i| {
            let mut nb = vec![(i + n - 1) % n, (i + 1) % n];
            nb.sort_unstable();
            nb
        })
        .collect();
    Network::new(neighbors, true)
}

/// G(n, p): every unordered pair of distinct nodes linked independently.
pub fn gen_erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Network> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "link probability must lie in [0, 1], got {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    Network::new(neighbors, true)
}

/// Stochastic block model parameters with a signal-type allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub shares: Vec<f64>,
    pub link_probs: Vec<Vec<f64>>,
    pub signal_shares: Vec<Vec<f64>>,
    pub signal_type_variances: Vec<f64>,
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.shares.len();
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if k == 0 {
            return bad("block model needs at least one network type".into());
        }
        if self.shares.iter().any(|&a| !(a > 0.0)) {
            return bad("network type shares must be positive".into());
        }
        if (self.shares.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad("network type shares must sum to 1".into());
        }
        if self.link_probs.len() != k || self.link_probs.iter().any(|r| r.len() != k) {
            return bad(format!("link_probs must be {k}x{k}"));
        }
        for a in 0..k {
            for b in 0..k {
                let p = self.link_probs[a][b];
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("link probability p[{a}][{b}] = {p} outside [0, 1]"));
                }
                if p != self.link_probs[b][a] {
                    return bad("link_probs must be symmetric".into());
                }
            }
            if self.link_probs[a].iter().all(|&p| p == 0.0) {
                return bad(format!("network type {a} observes no type with positive probability"));
            }
        }
        let s = self.signal_type_variances.len();
        if s == 0 {
            return bad("at least one signal type is required".into());
        }
        if self
            .signal_type_variances
            .iter()
            .any(|&v| !(v.is_finite() && v > 0.0))
        {
            return bad("signal type variances must be positive".into());
        }
        let distinct: BTreeSet<u64> = self
            .signal_type_variances
            .iter()
            .map(|v| v.to_bits())
            .collect();
        if distinct.len() != s {
            return bad("signal type variances must be distinct".into());
        }
        if self.signal_shares.len() != k {
            return bad(format!("signal_shares needs one row per network type ({k})"));
        }
        for (a, row) in self.signal_shares.iter().enumerate() {
            if row.len() != s || row.iter().any(|&q| !(q >= 0.0)) {
                return bad(format!("signal_shares row {a} must hold {s} nonnegative entries"));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return bad(format!("signal_shares row {a} must sum to 1"));
            }
        }
        Ok(())
    }
}

/// Splits `total` items by `shares` using floor plus largest fractional
/// remainders; ties go to the lowest index.
pub fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Samples an undirected stochastic block model. Network types occupy
/// contiguous index ranges in type order; within each type, signal types are
/// assigned contiguously in signal-type order.
pub fn gen_sbm(spec: &BlockSpec, n: usize, seed: u64) -> Result<(Network, SignalProfile)> {
    spec.validate()?;
    let k = spec.shares.len();
    if n < k {
        return Err(Error::InsufficientNodes { nodes: n, types: k });
    }
    let type_counts = apportion(&spec.shares, n);
    let mut class = Vec::with_capacity(n);
    let mut sigma2 = Vec::with_capacity(n);
    for (ty, &count) in type_counts.iter().enumerate() {
        let signal_counts = apportion(&spec.signal_shares[ty], count);
        for (tau, &c) in signal_counts.iter().enumerate() {
            for _ in 0..c {
                class.push((ty, tau));
                sigma2.push(spec.signal_type_variances[tau]);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let p = spec.link_probs[class[i].0][class[j].0];
            if rng.random::<f64>() < p {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    let net = Network::new(neighbors, true)?.with_node_class(class)?;
    Ok((net, SignalProfile::new(sigma2)?))
}

fn parse_pair(line: &str) -> Option<(&str, &str)> {
    let (a, b) = line.split_once(',')?;
    let (a, b) = (a.trim(), b.trim());
    if a.is_empty() || b.is_empty() || b.contains(',') {
        return None;
    }
    Some((a, b))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Reads a `src,dst` edge list. Node ids are arbitrary integers and are
/// remapped to dense indices in ascending id order; the original ids are kept
/// as labels.
pub fn load_edge_list(path: &Path, undirected: bool, allow_self_loops: bool) -> Result<Network> {
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut edges = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let (a, b) = parse_pair(line)
            .ok_or_else(|| parse_err(line_no, format!("expected `src,dst`, got `{line}`")))?;
        let src: i64 = a
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid node id `{a}`")))?;
        let dst: i64 = b
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid node id `{b}`")))?;
        if src == dst && !allow_self_loops {
            return Err(parse_err(line_no, format!("self-loop on node {src}")));
        }
        edges.push((src, dst));
    }
    if edges.is_empty() {
        return Err(Error::NoEdges {
            path: path.to_path_buf(),
        });
    }

    let labels: Vec<i64> = edges
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<i64, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut sets = vec![BTreeSet::new(); labels.len()];
    for (a, b) in edges {
        let (i, j) = (index[&a], index[&b]);
        sets[i].insert(j);
        if undirected {
            sets[j].insert(i);
        }
    }
    let neighbors = sets.into_iter().map(|s| s.into_iter().collect()).collect();
    let mut net = Network::new(neighbors, undirected)?;
    net.labels = Some(labels);
    Ok(net)
}

/// Reads `node_id,sigma2` lines. Ids are matched against the network's
/// labels when it has them, otherwise taken as dense indices. Nodes absent
/// from the file take `default`, or are an error when no default is given.
pub fn load_signal_file(path: &Path, net: &Network, default: Option<f64>) -> Result<SignalProfile> {
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut values: Vec<Option<f64>> = vec![None; net.n()];
    for (line_no, line) in content_lines(&text) {
        let (a, b) = parse_pair(line)
            .ok_or_else(|| parse_err(line_no, format!("expected `node_id,sigma2`, got `{line}`")))?;
        let id: i64 = a
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid node id `{a}`")))?;
        let sigma2: f64 = b
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid variance `{b}`")))?;
        let idx = match net.labels() {
            Some(_) => net.index_of_label(id),
            None => usize::try_from(id).ok().filter(|&i| i < net.n()),
        };
        // Ids that are not in the network are ignored: attribute files often
        // cover households without any reported links.
        if let Some(i) = idx {
            values[i] = Some(sigma2);
        }
    }
    let sigma2 = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.or(default).ok_or_else(|| {
                Error::InvalidParameter(format!("no signal variance for node {i} in {}", path.display()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SignalProfile::new(sigma2)
}
