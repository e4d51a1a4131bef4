//! Best-response weights, the covariance updating map and its fixed points.
//!
//! One period of play maps the action-error covariance `V` of the previous
//! period into the next one. Observations available to an agent at `t+1` are
//! `rho^l a_{j,t+1-l}` for `l in 1..=m`; their errors relative to
//! `theta_{t+1}` have covariance `rho^2 V + 1` (see [`shift_block`]).

mod cov;
mod factor;
mod weights;

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cov::CovMatrix;
pub use factor::{solve_ones, OnesSolve, RIDGE_SCALE, RIDGE_TRIGGER};
pub use weights::{SocialWeight, WeightProfile, SUM_TOLERANCE};

use crate::error::{Error, Result};
use crate::network::{Environment, Network, SignalProfile};

/// Covariance of next-period observation errors, indexed by
/// `(node, lag)` with `lag in 1..=m`; the flat index of `(i, l)` is
/// `(l-1) * n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationCov {
    n: usize,
    m: usize,
    entries: DMatrix<f64>,
}

impl ObservationCov {
    pub fn get(&self, i: usize, lag_i: usize, j: usize, lag_j: usize) -> f64 {
        self.entries[((lag_i - 1) * self.n + i, (lag_j - 1) * self.n + j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn memory(&self) -> usize {
        self.m
    }
}

/// `B((i,l),(j,l')) = rho^2 V((i,l-1),(j,l'-1)) + 1`.
pub fn shift_block(v: &CovMatrix, env: &Environment) -> ObservationCov {
    let r2 = env.rho() * env.rho();
    ObservationCov {
        n: v.n(),
        m: v.memory(),
        entries: v.matrix().map(|x| r2 * x + 1.0),
    }
}

fn check_dims(v: &CovMatrix, net: &Network, sig: &SignalProfile, env: &Environment) -> Result<()> {
    if v.n() != net.n() || sig.len() != net.n() || v.memory() != env.memory() {
        return Err(Error::DimensionMismatch(format!(
            "covariance n={} m={}, network n={}, signals n={}, memory={}",
            v.n(),
            v.memory(),
            net.n(),
            sig.len(),
            env.memory()
        )));
    }
    Ok(())
}

/// Agents sharing an identical observation set. Their bordered systems
/// differ only in the signal entry, so the social block is factorized once.
#[derive(Debug, Clone)]
struct NeighborhoodGroups {
    groups: Vec<(Vec<usize>, Vec<usize>)>,
}

impl NeighborhoodGroups {
    fn new(net: &Network) -> Self {
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        for i in 0..net.n() {
            let mut key = net.neighbors(i).to_vec();
            key.sort_unstable();
            match index.get(&key) {
                Some(&g) => groups[g].1.push(i),
                None => {
                    index.insert(key.clone(), groups.len());
                    groups.push((key, vec![i]));
                }
            }
        }
        Self { groups }
    }
}

fn grouped_best_response(
    b: &ObservationCov,
    groups: &NeighborhoodGroups,
    sig: &SignalProfile,
) -> Result<WeightProfile> {
    let n = b.n;
    let m = b.m;
    let per_group: Vec<Vec<(usize, Vec<SocialWeight>, f64)>> = groups
        .groups
        .par_iter()
        .map(|(nbrs, members)| {
            if nbrs.is_empty() {
                return Ok(members.iter().map(|&i| (i, Vec::new(), 1.0)).collect());
            }
            let slots: Vec<(usize, usize)> = (1..=m)
                .flat_map(|lag| nbrs.iter().map(move |&j| (j, lag)))
                .collect();
            let idx: Vec<usize> = slots.iter().map(|&(j, lag)| (lag - 1) * n + j).collect();
            let block = DMatrix::from_fn(idx.len(), idx.len(), |r, c| b.entries[(idx[r], idx[c])]);
            let solved = solve_ones(&block).map_err(|condition| Error::IllConditioned {
                agent: members[0],
                condition,
            })?;
            let social_mass = solved.solution.sum();
            Ok(members
                .iter()
                .map(|&i| {
                    let precision = sig.precision(i);
                    let denom = social_mass + precision;
                    let social = slots
                        .iter()
                        .zip(solved.solution.iter())
                        .map(|(&(node, lag), &x)| SocialWeight {
                            node,
                            lag,
                            weight: x / denom,
                        })
                        .collect();
                    (i, social, precision / denom)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let agents = sig.len();
    let mut social = vec![Vec::new(); agents];
    let mut own = vec![0.0; agents];
    for (i, s, w) in per_group.into_iter().flatten() {
        social[i] = s;
        own[i] = w;
    }
    Ok(WeightProfile::from_parts_unchecked(social, own))
}

/// Bayesian best response to `v`: each agent weights its observations by
/// `1' C^-1 / (1' C^-1 1)` where `C` is the observation covariance bordered
/// by the agent's signal variance.
pub fn best_response_weights(
    v: &CovMatrix,
    net: &Network,
    sig: &SignalProfile,
    env: &Environment,
) -> Result<WeightProfile> {
    check_dims(v, net, sig, env)?;
    let b = shift_block(v, env);
    grouped_best_response(&b, &NeighborhoodGroups::new(net), sig)
}

/// Frozen linear play in a form suited to repeated covariance updates.
struct LinearPlay {
    n: usize,
    m: usize,
    /// Per agent `(column in B, weight)`.
    rows: Vec<Vec<(usize, f64)>>,
    dense: Option<DMatrix<f64>>,
    own: Vec<f64>,
}

impl LinearPlay {
    fn new(w: &WeightProfile, m: usize) -> Self {
        let n = w.n();
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                w.social(i)
                    .iter()
                    .map(|s| ((s.lag - 1) * n + s.node, s.weight))
                    .collect()
            })
            .collect();
        let nnz: usize = rows.iter().map(Vec::len).sum();
        // Dense products win once a sizable share of pairs is observed.
        let dense = (n >= 64 && nnz * 8 > n * n * m).then(|| w.dense_social(m));
        Self {
            n,
            m,
            rows,
            dense,
            own: w.own_signal_weights().to_vec(),
        }
    }

    /// Next-period covariance when everyone plays these weights against `v`.
    fn apply(&self, v: &CovMatrix, sig: &SignalProfile, env: &Environment) -> CovMatrix {
        let (n, m) = (self.n, self.m);
        let d = n * m;
        let b = shift_block(v, env).entries;

        // g = B W', column i is B w_i
        let g = match &self.dense {
            Some(w) => &b * w.transpose(),
            None => {
                let mut g = DMatrix::zeros(d, n);
                for (i, row) in self.rows.iter().enumerate() {
                    let mut col = g.column_mut(i);
                    for &(k, wk) in row {
                        col.axpy(wk, &b.column(k), 1.0);
                    }
                }
                g
            }
        };

        let mut next = CovMatrix::zeros(n, m);
        let out = next.entries_mut();
        match &self.dense {
            Some(w) => {
                let lag0 = w * &g;
                out.view_mut((0, 0), (n, n)).copy_from(&lag0);
            }
            None => {
                for i in 0..n {
                    let gi = g.column(i);
                    for j in i..n {
                        let val: f64 = self.rows[j].iter().map(|&(k, wk)| wk * gi[k]).sum();
                        out[(i, j)] = val;
                        out[(j, i)] = val;
                    }
                }
            }
        }
        for i in 0..n {
            out[(i, i)] += self.own[i] * self.own[i] * sig.get(i);
        }

        // Lags 1..m-1 of the new period are lags 1..m-1 of the observations.
        for lag in 1..m {
            for j in 0..n {
                let src = (lag - 1) * n + j;
                let dst = lag * n + j;
                for i in 0..n {
                    out[(i, dst)] = g[(src, i)];
                    out[(dst, i)] = g[(src, i)];
                }
            }
        }
        if m > 1 {
            let carried = b.view((0, 0), (n * (m - 1), n * (m - 1)));
            out.view_mut((n, n), (n * (m - 1), n * (m - 1))).copy_from(&carried);
        }
        next.symmetrize();
        next
    }
}

/// One application of the best-response map: the new covariance and the
/// weights that produced it.
pub fn phi_step(
    v: &CovMatrix,
    net: &Network,
    sig: &SignalProfile,
    env: &Environment,
) -> Result<(CovMatrix, WeightProfile)> {
    let w = best_response_weights(v, net, sig, env)?;
    let next = LinearPlay::new(&w, env.memory()).apply(v, sig, env);
    Ok((next, w))
}

/// One update with the weights held fixed at `w`.
pub fn fixed_weight_step(
    v: &CovMatrix,
    w: &WeightProfile,
    sig: &SignalProfile,
    env: &Environment,
) -> Result<CovMatrix> {
    if v.n() != w.n() || sig.len() != w.n() || v.memory() != env.memory() {
        return Err(Error::DimensionMismatch("weights, signals and covariance disagree".into()));
    }
    Ok(LinearPlay::new(w, env.memory()).apply(v, sig, env))
}

/// `||Phi(V) - V||_sup`.
pub fn residual(v: &CovMatrix, net: &Network, sig: &SignalProfile, env: &Environment) -> Result<f64> {
    let (next, _) = phi_step(v, net, sig, env)?;
    Ok(next.sup_distance(v))
}

/// Covariance produced when every agent has always acted on its own signal:
/// `diag(sigma^2)` replicated over the lag blocks, then shifted until all
/// lags are consistent.
pub fn autarky_cov(sig: &SignalProfile, env: &Environment) -> CovMatrix {
    let n = sig.len();
    let m = env.memory();
    let mut v = CovMatrix::zeros(n, m);
    for lag in 0..m {
        for i in 0..n {
            let k = v.index(i, lag);
            v.entries_mut()[(k, k)] = sig.get(i);
        }
    }
    let play = LinearPlay::new(&WeightProfile::autarky(n), m);
    for _ in 1..m {
        v = play.apply(&v, sig, env);
    }
    v
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Sup-norm tolerance on `Phi(V) - V`.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting covariance; [`autarky_cov`] when absent.
    pub init: Option<CovMatrix>,
    /// Weight on the previous iterate, `V <- (1-d) Phi(V) + d V`.
    pub damping: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            init: None,
            damping: 0.0,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidParameter(format!(
                "need tol > 0, max_iter >= 1, damping in [0, 1); got {}, {}, {}",
                self.tol, self.max_iter, self.damping
            )));
        }
        Ok(())
    }

    fn start(&self, net: &Network, sig: &SignalProfile, env: &Environment) -> Result<CovMatrix> {
        let v = match &self.init {
            Some(v) => v.clone(),
            None => autarky_cov(sig, env),
        };
        check_dims(&v, net, sig, env)?;
        Ok(v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub cov: CovMatrix,
    pub weights: WeightProfile,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Iterates the best-response map from `opts.init` until the sup-norm change
/// drops to `opts.tol`. The returned covariance is the last iterate `V` whose
/// residual was measured, and the weights are the best response to it.
pub fn solve_equilibrium(
    net: &Network,
    sig: &SignalProfile,
    env: &Environment,
    opts: &SolveOptions,
) -> Result<EquilibriumResult> {
    opts.validate()?;
    let groups = NeighborhoodGroups::new(net);
    let mut v = opts.start(net, sig, env)?;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let w = grouped_best_response(&shift_block(&v, env), &groups, sig)?;
        let next = LinearPlay::new(&w, env.memory()).apply(&v, sig, env);
        if !next.is_finite() {
            return Err(Error::Divergence { iterations });
        }
        let residual = next.sup_distance(&v);
        if residual <= opts.tol || iterations >= opts.max_iter {
            return Ok(EquilibriumResult {
                cov: v,
                weights: w,
                iterations,
                residual,
                converged: residual <= opts.tol,
            });
        }
        v = if opts.damping > 0.0 {
            let mut mixed = next;
            *mixed.entries_mut() *= 1.0 - opts.damping;
            *mixed.entries_mut() += v.matrix() * opts.damping;
            mixed
        } else {
            next
        };
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyState {
    pub cov: CovMatrix,
    pub iterations: usize,
    pub residual: f64,
}

/// Consecutive non-decreasing residuals tolerated before giving up.
const STALL_LIMIT: usize = 100;

/// Fixed point of the update with frozen weights `w`.
pub fn steady_state(
    w: &WeightProfile,
    net: &Network,
    sig: &SignalProfile,
    env: &Environment,
    opts: &SolveOptions,
) -> Result<SteadyState> {
    opts.validate()?;
    w.check_support(net, env.memory())?;
    let play = LinearPlay::new(w, env.memory());
    let mut v = opts.start(net, sig, env)?;
    let mut previous = f64::INFINITY;
    let mut stalled = 0;
    for iterations in 1..=opts.max_iter {
        let next = play.apply(&v, sig, env);
        if !next.is_finite() {
            return Err(Error::NonContractive(format!(
                "covariance overflowed after {iterations} iterations"
            )));
        }
        let residual = next.sup_distance(&v);
        if residual <= opts.tol {
            return Ok(SteadyState {
                cov: v,
                iterations,
                residual,
            });
        }
        if residual >= previous {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                return Err(Error::NonContractive(format!(
                    "residual {residual:.3e} has not decreased for {STALL_LIMIT} iterations"
                )));
            }
        } else {
            stalled = 0;
        }
        previous = residual;
        v = next;
    }
    Err(Error::NonContractive(format!(
        "no convergence within {} iterations (last residual {previous:.3e})",
        opts.max_iter
    )))
}
