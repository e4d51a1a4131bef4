use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;

/// Weight on the observation `rho^lag a_{node, t-lag}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocialWeight {
    pub node: usize,
    pub lag: usize,
    pub weight: f64,
}

/// Linear strategy of every agent: weights on observed lagged actions plus
/// the weight on the agent's own private signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    social: Vec<Vec<SocialWeight>>,
    own_signal: Vec<f64>,
}

pub const SUM_TOLERANCE: f64 = 1e-10;

impl WeightProfile {
    pub fn new(social: Vec<Vec<SocialWeight>>, own_signal: Vec<f64>) -> Result<Self> {
        if social.len() != own_signal.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} social rows for {} own-signal weights",
                social.len(),
                own_signal.len()
            )));
        }
        let profile = Self { social, own_signal };
        for i in 0..profile.n() {
            let total = profile.total(i);
            if (total - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidParameter(format!(
                    "weights of agent {i} sum to {total}, not 1"
                )));
            }
        }
        Ok(profile)
    }

    /// Every agent acts on its own signal alone.
    pub fn autarky(n: usize) -> Self {
        Self {
            social: vec![Vec::new(); n],
            own_signal: vec![1.0; n],
        }
    }

    /// Own-signal weight `own` and the remainder split evenly over all
    /// lag-1 observations; the social weights on longer lags are zero.
    pub fn symmetric(net: &Network, memory: usize, own: f64) -> Self {
        let social = (0..net.n())
            .map(|i| {
                let nb = net.neighbors(i);
                let share = if nb.is_empty() { 0.0 } else { (1.0 - own) / nb.len() as f64 };
                (1..=memory)
                    .flat_map(|lag| {
                        nb.iter().map(move |&node| SocialWeight {
                            node,
                            lag,
                            weight: if lag == 1 { share } else { 0.0 },
                        })
                    })
                    .collect()
            })
            .collect();
        let own_signal = (0..net.n())
            .map(|i| if net.neighbors(i).is_empty() { 1.0 } else { own })
            .collect();
        Self { social, own_signal }
    }

    pub fn n(&self) -> usize {
        self.own_signal.len()
    }

    pub fn own_signal(&self, i: usize) -> f64 {
        self.own_signal[i]
    }

    pub fn own_signal_weights(&self) -> &[f64] {
        &self.own_signal
    }

    pub fn social(&self, i: usize) -> &[SocialWeight] {
        &self.social[i]
    }

    pub fn total(&self, i: usize) -> f64 {
        self.own_signal[i] + self.social[i].iter().map(|w| w.weight).sum::<f64>()
    }

    /// Weight agent `i` puts on `node` at `lag`, zero when unobserved.
    pub fn weight_on(&self, i: usize, node: usize, lag: usize) -> f64 {
        self.social[i]
            .iter()
            .filter(|w| w.node == node && w.lag == lag)
            .map(|w| w.weight)
            .sum()
    }

    pub fn min_social_weight(&self) -> Option<f64> {
        self.social
            .iter()
            .flatten()
            .map(|w| w.weight)
            .min_by(f64::total_cmp)
    }

    pub fn max_abs_difference(&self, other: &WeightProfile) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            worst = worst.max((self.own_signal[i] - other.own_signal[i]).abs());
            for w in &self.social[i] {
                worst = worst.max((w.weight - other.weight_on(i, w.node, w.lag)).abs());
            }
            for w in &other.social[i] {
                worst = worst.max((w.weight - self.weight_on(i, w.node, w.lag)).abs());
            }
        }
        worst
    }

    /// Checks that agent `i`'s social weights cover exactly
    /// `N_i x {1..=memory}`.
    pub fn check_support(&self, net: &Network, memory: usize) -> Result<()> {
        if self.n() != net.n() {
            return Err(Error::DimensionMismatch(format!(
                "weights for {} agents on a {}-node network",
                self.n(),
                net.n()
            )));
        }
        for i in 0..net.n() {
            let mut expected: Vec<(usize, usize)> = (1..=memory)
                .flat_map(|lag| net.neighbors(i).iter().map(move |&j| (j, lag)))
                .collect();
            let mut actual: Vec<(usize, usize)> =
                self.social[i].iter().map(|w| (w.node, w.lag)).collect();
            expected.sort_unstable();
            actual.sort_unstable();
            if expected != actual {
                return Err(Error::InvalidParameter(format!(
                    "weights of agent {i} do not match its neighborhood"
                )));
            }
        }
        Ok(())
    }

    /// Dense `n x (n*memory)` social-weight matrix whose column
    /// `(lag-1)*n + j` holds the weights on `rho^lag a_{j,t-lag}`.
    pub fn dense_social(&self, memory: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut w = DMatrix::zeros(n, n * memory);
        for (i, row) in self.social.iter().enumerate() {
            for sw in row {
                w[(i, (sw.lag - 1) * n + sw.node)] += sw.weight;
            }
        }
        w
    }

    /// Scales agent `agent`'s social weights by `1 - eps` and moves the
    /// freed mass onto its private signal.
    pub fn perturb_toward_signal(&self, agent: usize, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidParameter(format!("eps must lie in [0, 1], got {eps}")));
        }
        if agent >= self.n() {
            return Err(Error::InvalidParameter(format!("no agent {agent}")));
        }
        let mut out = self.clone();
        for w in &mut out.social[agent] {
            w.weight *= 1.0 - eps;
        }
        out.own_signal[agent] = (1.0 - eps) * self.own_signal[agent] + eps;
        Ok(out)
    }

    /// Sparse triplets, one row per weight:
    /// `agent,source,lag,weight`, where `source` is a node index or `signal`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent,source,lag,weight\n");
        for i in 0..self.n() {
            let _ = writeln!(out, "{i},signal,0,{}", crate::fmt_num(self.own_signal[i]));
            for w in &self.social[i] {
                let _ = writeln!(out, "{i},{},{},{}", w.node, w.lag, crate::fmt_num(w.weight));
            }
        }
        out
    }

    pub fn from_csv(text: &str, n: usize) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: "weights".into(),
            line,
            message,
        };
        let mut social = vec![Vec::new(); n];
        let mut own = vec![None; n];
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if k == 0 || line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(parse_err(k + 1, format!("expected 4 fields, got `{line}`")));
            }
            let agent: usize = fields[0]
                .parse()
                .map_err(|_| parse_err(k + 1, format!("invalid agent `{}`", fields[0])))?;
            if agent >= n {
                return Err(parse_err(k + 1, format!("agent {agent} out of range")));
            }
            let weight: f64 = fields[3]
                .parse()
                .map_err(|_| parse_err(k + 1, format!("invalid weight `{}`", fields[3])))?;
            if fields[1] == "signal" {
                own[agent] = Some(weight);
            } else {
                let node: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(k + 1, format!("invalid source `{}`", fields[1])))?;
                let lag: usize = fields[2]
                    .parse()
                    .ok()
                    .filter(|&l| l >= 1)
                    .ok_or_else(|| parse_err(k + 1, format!("invalid lag `{}`", fields[2])))?;
                social[agent].push(SocialWeight { node, lag, weight });
            }
        }
        let own_signal = own
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                w.ok_or_else(|| Error::InvalidParameter(format!("no signal weight for agent {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(social, own_signal)
    }

    pub(crate) fn from_parts_unchecked(social: Vec<Vec<SocialWeight>>, own_signal: Vec<f64>) -> Self {
        Self { social, own_signal }
    }
}
