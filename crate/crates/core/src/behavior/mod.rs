//! Regimes other than Bayesian best response: naive averaging, planner
//! weights restricted to groups, and Pareto comparisons of steady states.

mod planner;

use serde::{Deserialize, Serialize};

pub use planner::{planner_optimize, GroupWeightSpec, PlannerOptions, PlannerResult};

use crate::error::{Error, Result};
use crate::kernel::{steady_state, CovMatrix, EquilibriumResult, SocialWeight, SolveOptions, WeightProfile};
use crate::network::{Environment, Network, SignalProfile};

/// Weights of agents who take each neighbor's action at face value as that
/// neighbor's private signal. Neighbor `j` is weighted by `sigma_j^-2`, and
/// the social estimate is believed to have variance
/// `rho^2 / sum_j sigma_j^-2 + 1`.
pub fn naive_weights(net: &Network, sig: &SignalProfile, env: &Environment) -> Result<WeightProfile> {
    if env.memory() != 1 {
        return Err(Error::NaiveMemory(env.memory()));
    }
    if net.n() != sig.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} signal variances for {} nodes",
            sig.len(),
            net.n()
        )));
    }
    let rho2 = env.rho() * env.rho();
    let mut social = Vec::with_capacity(net.n());
    let mut own = Vec::with_capacity(net.n());
    for i in 0..net.n() {
        let nb = net.neighbors(i);
        if nb.is_empty() {
            social.push(Vec::new());
            own.push(1.0);
            continue;
        }
        let total: f64 = nb.iter().map(|&j| sig.precision(j)).sum();
        let believed = rho2 / total + 1.0;
        let ws = sig.precision(i) / (sig.precision(i) + 1.0 / believed);
        social.push(
            nb.iter()
                .map(|&j| SocialWeight {
                    node: j,
                    lag: 1,
                    weight: (1.0 - ws) * sig.precision(j) / total,
                })
                .collect(),
        );
        own.push(ws);
    }
    WeightProfile::new(social, own)
}

/// Steady state of naive play. The weights do not depend on `V`, so this is
/// a single fixed-weight solve.
pub fn solve_naive(
    net: &Network,
    sig: &SignalProfile,
    env: &Environment,
    opts: &SolveOptions,
) -> Result<EquilibriumResult> {
    let weights = naive_weights(net, sig, env)?;
    let ss = steady_state(&weights, net, sig, env, opts)?;
    Ok(EquilibriumResult {
        cov: ss.cov,
        weights,
        iterations: ss.iterations,
        residual: ss.residual,
        converged: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParetoRelation {
    FirstDominates,
    SecondDominates,
    Equal,
    Incomparable,
}

impl ParetoRelation {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParetoRelation::FirstDominates => "first_dominates",
            ParetoRelation::SecondDominates => "second_dominates",
            ParetoRelation::Equal => "equal",
            ParetoRelation::Incomparable => "incomparable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoVerdict {
    pub relation: ParetoRelation,
    /// `V2_ii - V1_ii`; positive entries favor the first matrix.
    pub margins: Vec<f64>,
}

const WEAK_GAP: f64 = 1e-12;
const STRICT_GAP: f64 = 1e-9;

/// Compares the lag-0 variances of two covariance matrices agent by agent.
pub fn pareto_compare(v1: &CovMatrix, v2: &CovMatrix) -> Result<ParetoVerdict> {
    if v1.n() != v2.n() {
        return Err(Error::DimensionMismatch(format!(
            "comparing {} agents with {}",
            v1.n(),
            v2.n()
        )));
    }
    let margins: Vec<f64> = (0..v1.n()).map(|i| v2.variance(i) - v1.variance(i)).collect();
    let dominates = |sign: f64| {
        margins.iter().all(|&d| sign * d >= WEAK_GAP) && margins.iter().any(|&d| sign * d > STRICT_GAP)
    };
    let relation = if margins.iter().all(|d| d.abs() <= STRICT_GAP) {
        ParetoRelation::Equal
    } else if dominates(1.0) {
        ParetoRelation::FirstDominates
    } else if dominates(-1.0) {
        ParetoRelation::SecondDominates
    } else {
        ParetoRelation::Incomparable
    };
    Ok(ParetoVerdict { relation, margins })
}

/// `agent` keeps `1 - eps` of its strategy and puts the extra `eps` on its
/// private signal.
pub fn perturb_toward_signal(w: &WeightProfile, agent: usize, eps: f64) -> Result<WeightProfile> {
    w.perturb_toward_signal(agent, eps)
}
