//! Recovering weights and signal variances from an action panel in which
//! the state is observed after the fact.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{CovMatrix, SocialWeight, WeightProfile};
use crate::montecarlo::PanelData;
use crate::network::{Environment, Network};

/// Adds i.i.d. `N(0, xi_var)` noise to every action, drawn in row-major
/// order from a `ChaCha8Rng` seeded with `seed`. States are untouched.
pub fn add_measurement_noise(panel: &PanelData, xi_var: f64, seed: u64) -> Result<PanelData> {
    if !(xi_var >= 0.0 && xi_var.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise variance must be >= 0, got {xi_var}")));
    }
    let mut out = panel.clone();
    if xi_var == 0.0 {
        return Ok(out);
    }
    let sd = xi_var.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for a in out.actions_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *a += sd * z;
    }
    out.measurement_noise_var += xi_var;
    Ok(out)
}

/// Links are reported when `|weight| > LINK_THRESHOLD * stderr`.
pub const LINK_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalEstimate {
    pub value: f64,
    /// False when the implied variance is not positive.
    pub valid: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationResult {
    /// Estimated weights on the candidate neighborhoods. They need not sum to
    /// one exactly.
    pub weights_hat: WeightProfile,
    /// Standard errors aligned with `weights_hat.social(i)`.
    pub social_stderr: Vec<Vec<f64>>,
    pub own_stderr: Vec<f64>,
    /// Residual variance of each agent's regression.
    pub fit: Vec<f64>,
    /// `(i, j)`: agent `i` is estimated to observe `j`.
    pub links_hat: Vec<(usize, usize)>,
    pub sigma2_hat: Option<Vec<SignalEstimate>>,
}

impl IdentificationResult {
    /// Whether `i` observing `j` was recovered.
    pub fn is_link(&self, i: usize, j: usize) -> bool {
        self.links_hat.binary_search(&(i, j)).is_ok()
    }

    /// Mean of the valid signal-variance estimates.
    pub fn mean_valid_sigma2(&self) -> Option<f64> {
        let est = self.sigma2_hat.as_ref()?;
        let valid: Vec<f64> = est.iter().filter(|e| e.valid).map(|e| e.value).collect();
        (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64)
    }

    /// One row per estimated weight: `agent,neighbor,weight,stderr,sigma2_hat,flag`.
    /// The own-signal row has neighbor `signal` and flags the variance
    /// estimate; social rows flag recovered links. Lags beyond the first are
    /// written as `node@lag`.
    pub fn report_csv(&self) -> String {
        let mut out = String::from("agent,neighbor,weight,stderr,sigma2_hat,flag\n");
        let w = &self.weights_hat;
        for i in 0..w.n() {
            let (sigma2, flag) = match &self.sigma2_hat {
                Some(est) if est[i].valid => (crate::fmt_num(est[i].value), "valid"),
                Some(est) => (crate::fmt_num(est[i].value), "invalid"),
                None => ("NaN".to_string(), "not_estimated"),
            };
            let _ = writeln!(
                out,
                "{i},signal,{},{},{sigma2},{flag}",
                crate::fmt_num(w.own_signal(i)),
                crate::fmt_num(self.own_stderr[i])
            );
            for (s, se) in w.social(i).iter().zip(&self.social_stderr[i]) {
                let neighbor = if s.lag == 1 {
                    s.node.to_string()
                } else {
                    format!("{}@{}", s.node, s.lag)
                };
                let flag = if s.weight.abs() > LINK_THRESHOLD * se { "link" } else { "no_link" };
                let _ = writeln!(
                    out,
                    "{i},{neighbor},{},{},{sigma2},{flag}",
                    crate::fmt_num(s.weight),
                    crate::fmt_num(*se)
                );
            }
        }
        out
    }
}

struct AgentFit {
    social: Vec<SocialWeight>,
    social_se: Vec<f64>,
    own: f64,
    own_se: f64,
    fit: f64,
}

/// Least squares without intercept via QR; returns coefficients, their
/// standard errors and the residual variance.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    let (rows, k) = x.shape();
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if !(scale > 0.0) || r.diagonal().iter().any(|d| d.abs() <= 1e-10 * scale) {
        return None;
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let beta = r.solve_upper_triangular(&qty.rows(0, k).into_owned())?;
    let resid = y - x * &beta;
    let s2 = resid.norm_squared() / (rows - k) as f64;
    let r_inv = r.solve_upper_triangular(&DMatrix::identity(k, k))?;
    // (X'X)^-1 = R^-1 R^-T
    let se = DVector::from_iterator(k, (0..k).map(|c| (s2 * r_inv.row(c).norm_squared()).sqrt()));
    Some((beta, se, s2))
}

fn fit_agent(panel: &PanelData, env: &Environment, slots: &[(usize, usize)], i: usize) -> Result<AgentFit> {
    let m = env.memory();
    let rows = panel.periods() - m;
    let k = slots.len() + 1;
    let rho_pow: Vec<f64> = (0..=m).map(|l| env.rho().powi(l as i32)).collect();
    let mut x = DMatrix::zeros(rows, k);
    let mut y = DVector::zeros(rows);
    for r in 0..rows {
        let t = r + m;
        y[r] = panel.action(t, i);
        for (c, &(j, lag)) in slots.iter().enumerate() {
            x[(r, c)] = rho_pow[lag] * panel.action(t - lag, j);
        }
        x[(r, k - 1)] = panel.state(t);
    }
    let (beta, se, s2) = ols(&x, &y).ok_or(Error::RankDeficient { agent: i })?;
    Ok(AgentFit {
        social: slots
            .iter()
            .zip(beta.iter())
            .map(|(&(node, lag), &weight)| SocialWeight { node, lag, weight })
            .collect(),
        social_se: se.iter().take(k - 1).copied().collect(),
        own: beta[k - 1],
        own_se: se[k - 1],
        fit: s2,
    })
}

/// Regresses each agent's action on `rho^l a_{j,t-l}` for every candidate
/// neighbor `j` and lag `l in 1..=m`, plus `theta_t`, without intercept.
pub fn recover_weights(panel: &PanelData, env: &Environment, candidate: &Network) -> Result<IdentificationResult> {
    let n = candidate.n();
    if panel.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "panel of {} agents, candidate network of {n}",
            panel.n()
        )));
    }
    let m = env.memory();
    let required = (10 * (m * candidate.max_degree() + 1)).max(m + 2);
    if panel.periods() < required {
        return Err(Error::InsufficientPeriods {
            available: panel.periods(),
            required,
        });
    }
    let fits = (0..n)
        .into_par_iter()
        .map(|i| {
            let slots: Vec<(usize, usize)> = (1..=m)
                .flat_map(|lag| candidate.neighbors(i).iter().map(move |&j| (j, lag)))
                .collect();
            fit_agent(panel, env, &slots, i)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut links_hat = Vec::new();
    for (i, f) in fits.iter().enumerate() {
        let mut linked: Vec<usize> = f
            .social
            .iter()
            .zip(&f.social_se)
            .filter(|(s, se)| s.weight.abs() > LINK_THRESHOLD * **se)
            .map(|(s, _)| s.node)
            .collect();
        linked.sort_unstable();
        linked.dedup();
        links_hat.extend(linked.into_iter().map(|j| (i, j)));
    }
    let mut social = Vec::with_capacity(n);
    let mut social_stderr = Vec::with_capacity(n);
    let mut own = Vec::with_capacity(n);
    let mut own_stderr = Vec::with_capacity(n);
    let mut fit = Vec::with_capacity(n);
    for f in fits {
        social.push(f.social);
        social_stderr.push(f.social_se);
        own.push(f.own);
        own_stderr.push(f.own_se);
        fit.push(f.fit);
    }
    Ok(IdentificationResult {
        weights_hat: WeightProfile::from_parts_unchecked(social, own),
        social_stderr,
        own_stderr,
        fit,
        links_hat,
        sigma2_hat: None,
    })
}

/// Inverts the one-period variance recursion agent by agent:
/// `sigma_i^2 = (V_ii - sum_jk W_ij W_ik (rho^2 V_jk + 1)) / (w_i^s)^2`.
/// Non-positive results are kept and flagged invalid.
pub fn recover_signal_variance(
    id: &IdentificationResult,
    v_hat: &CovMatrix,
    env: &Environment,
) -> Result<Vec<SignalEstimate>> {
    if env.memory() != 1 || v_hat.memory() != 1 {
        return Err(Error::InvalidParameter(
            "signal-variance recovery needs memory 1".into(),
        ));
    }
    let w = &id.weights_hat;
    if v_hat.n() != w.n() {
        return Err(Error::DimensionMismatch(format!(
            "covariance for {} agents, weights for {}",
            v_hat.n(),
            w.n()
        )));
    }
    let rho2 = env.rho() * env.rho();
    (0..w.n())
        .map(|i| {
            let ws = w.own_signal(i);
            if ws == 0.0 || !ws.is_finite() {
                return Err(Error::DegenerateSignalWeight { agent: i });
            }
            let mut social = 0.0;
            for a in w.social(i) {
                for b in w.social(i) {
                    social += a.weight * b.weight * (rho2 * v_hat.get(a.node, 0, b.node, 0) + 1.0);
                }
            }
            let value = (v_hat.variance(i) - social) / (ws * ws);
            Ok(SignalEstimate {
                value,
                valid: value > 0.0 && value.is_finite(),
            })
        })
        .collect()
}

/// Weights, links and signal variances from one panel, with `V` estimated
/// from the same panel.
pub fn identify(panel: &PanelData, env: &Environment, candidate: &Network) -> Result<IdentificationResult> {
    let mut id = recover_weights(panel, env, candidate)?;
    if env.memory() == 1 {
        let v_hat = crate::montecarlo::empirical_cov(panel, env)?;
        id.sigma2_hat = Some(recover_signal_variance(&id, &v_hat, env)?);
    }
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{solve_equilibrium, SolveOptions};
    use crate::montecarlo::simulate_paths;
    use crate::network::{gen_complete, SignalProfile};

    fn pentagon() -> Network {
        Network::new(
            vec![vec![1, 2, 4], vec![0, 2], vec![0, 1, 3], vec![2, 4], vec![0, 3]],
            true,
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_is_identity_and_seeded() {
        let panel = PanelData::new(vec![1.0, 2.0], vec![vec![0.5, 0.1], vec![0.2, 0.3]]).unwrap();
        assert_eq!(add_measurement_noise(&panel, 0.0, 9).unwrap(), panel);
        let a = add_measurement_noise(&panel, 0.5, 9).unwrap();
        let b = add_measurement_noise(&panel, 0.5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states(), panel.states());
        assert!(add_measurement_noise(&panel, -1.0, 9).is_err());
    }

    #[test]
    fn noise_has_requested_variance() {
        let t = 100_000;
        let panel = PanelData::new(vec![0.0; t], vec![vec![0.0]; t]).unwrap();
        let noisy = add_measurement_noise(&panel, 0.01, 4).unwrap();
        let d: Vec<f64> = (0..t).map(|k| noisy.action(k, 0)).collect();
        let mean = d.iter().sum::<f64>() / t as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
        // Var of a sample variance of normals is 2 s^4 / (t - 1)
        let se = (2.0 * 0.01f64.powi(2) / (t - 1) as f64).sqrt();
        assert!((var - 0.01).abs() < 3.0 * se, "{var}");
    }

    /// `a_t = rho W a_{t-1} + w^s theta_t`, i.e. play without signal noise,
    /// so the regression holds exactly.
    fn noiseless_panel(w: &WeightProfile, rho: f64, periods: usize) -> PanelData {
        let n = w.n();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut theta = 0.0;
        let mut prev = vec![0.0; n];
        let mut states = Vec::new();
        let mut actions = Vec::new();
        for _ in 0..periods {
            theta = rho * theta + rng.sample::<f64, _>(StandardNormal);
            let cur: Vec<f64> = (0..n)
                .map(|i| {
                    w.own_signal(i) * theta + w.social(i).iter().map(|s| s.weight * rho * prev[s.node]).sum::<f64>()
                })
                .collect();
            states.push(theta);
            actions.push(cur.clone());
            prev = cur;
        }
        PanelData::new(states, actions).unwrap()
    }

    #[test]
    fn exact_recovery_without_noise() {
        // symmetric weights would make every action identical, so use
        // heterogeneous equilibrium weights
        let net = pentagon();
        let sig = SignalProfile::new(vec![1.0, 2.0, 3.0, 1.5, 2.5]).unwrap();
        let env = Environment::new(0.8, 1).unwrap();
        let w = solve_equilibrium(&net, &sig, &env, &SolveOptions::default()).unwrap().weights;
        let panel = noiseless_panel(&w, 0.8, 400);
        let id = recover_weights(&panel, &env, &net).unwrap();
        assert!(id.weights_hat.max_abs_difference(&w) < 1e-8);
    }

    #[test]
    fn exact_equilibrium_inverts_to_true_variances() {
        let net = pentagon();
        let sig = SignalProfile::new(vec![1.0, 2.0, 3.0, 1.5, 2.5]).unwrap();
        let env = Environment::new(0.8, 1).unwrap();
        let eq = solve_equilibrium(&net, &sig, &env, &SolveOptions::with_tol(1e-13)).unwrap();
        let id = IdentificationResult {
            social_stderr: (0..5).map(|i| vec![0.0; eq.weights.social(i).len()]).collect(),
            own_stderr: vec![0.0; 5],
            fit: vec![0.0; 5],
            links_hat: Vec::new(),
            sigma2_hat: None,
            weights_hat: eq.weights.clone(),
        };
        let est = recover_signal_variance(&id, &eq.cov, &env).unwrap();
        for i in 0..5 {
            assert!(est[i].valid);
            assert!((est[i].value - sig.get(i)).abs() < 1e-8, "agent {i}: {}", est[i].value);
        }

        // shrinking V_00 below the social part makes agent 0's numerator negative
        let mut bad = eq.cov.clone();
        bad.entries_mut()[(0, 0)] = 0.01;
        let est = recover_signal_variance(&id, &bad, &env).unwrap();
        assert!(!est[0].valid && est[1].valid);

        let mut degenerate = id.clone();
        degenerate.weights_hat = WeightProfile::from_parts_unchecked(
            (0..5).map(|i| eq.weights.social(i).to_vec()).collect(),
            vec![0.5, 0.0, 0.5, 0.5, 0.5],
        );
        assert!(matches!(
            recover_signal_variance(&degenerate, &eq.cov, &env),
            Err(Error::DegenerateSignalWeight { agent: 1 })
        ));
    }

    #[test]
    fn rank_deficiency_names_agent() {
        // agents 1 and 2 play identical actions, so agent 0 cannot tell them apart
        let periods = 100;
        let states: Vec<f64> = (0..periods).map(|t| (t as f64 * 0.37).sin()).collect();
        let actions = (0..periods)
            .map(|t| {
                let c = (t as f64 * 1.3).cos();
                vec![states[t] + 0.1 * c, c, c]
            })
            .collect();
        let panel = PanelData::new(states, actions).unwrap();
        let net = Network::new(vec![vec![1, 2], vec![], vec![]], false).unwrap();
        let env = Environment::new(0.5, 1).unwrap();
        assert!(matches!(
            recover_weights(&panel, &env, &net),
            Err(Error::RankDeficient { agent: 0 })
        ));
        let short = PanelData::new(vec![0.0; 5], vec![vec![0.0; 3]; 5]).unwrap();
        assert!(matches!(recover_weights(&short, &env, &net), Err(Error::InsufficientPeriods { .. })));
    }

    #[test]
    fn simulated_panel_recovers_weights_and_links() {
        let net = pentagon();
        let sig = SignalProfile::new(vec![1.0, 2.0, 3.0, 1.5, 2.5]).unwrap();
        let env = Environment::new(0.8, 1).unwrap();
        let eq = solve_equilibrium(&net, &sig, &env, &SolveOptions::default()).unwrap();
        let clean = simulate_paths(&eq.weights, &net, &sig, &env, 100_000, 1000, 21).unwrap();
        let panel = add_measurement_noise(&clean, 0.01, 22).unwrap();
        let id = identify(&panel, &env, &gen_complete(5, false).unwrap()).unwrap();
        for i in 0..5 {
            let rel = (id.weights_hat.own_signal(i) - eq.weights.own_signal(i)).abs() / eq.weights.own_signal(i);
            assert!(rel < 0.05, "own weight of {i}: {rel}");
            for s in eq.weights.social(i) {
                let got = id.weights_hat.weight_on(i, s.node, 1);
                assert!((got - s.weight).abs() / s.weight.abs() < 0.05, "weight {i}->{}", s.node);
            }
            let est = id.sigma2_hat.as_ref().unwrap()[i];
            assert!(est.valid && (est.value - sig.get(i)).abs() / sig.get(i) < 0.1);
        }
        let mut truth: Vec<(usize, usize)> = (0..5).flat_map(|i| net.neighbors(i).iter().map(move |&j| (i, j))).collect();
        truth.sort_unstable();
        assert_eq!(id.links_hat, truth);
        let report = id.report_csv();
        assert!(report.starts_with("agent,neighbor,weight,stderr,sigma2_hat,flag\n0,signal,"));
        assert_eq!(report.lines().count(), 1 + 5 * 5);
    }
}
