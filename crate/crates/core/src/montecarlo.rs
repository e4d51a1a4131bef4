//! Forward simulation of the state, signals and linear play.
//!
//! Draw order is fixed: when `|rho| < 1` the first draw is the standard
//! normal behind the initial state. Each period then draws the innovation
//! `nu_t` first, followed by `eta_{i,t}` for `i = 0..n` in index order. All
//! draws come from one `ChaCha8Rng` seeded with the `u64` seed.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{CovMatrix, WeightProfile};
use crate::network::{Environment, Network, SignalProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelData {
    n: usize,
    states: Vec<f64>,
    /// Row-major, `periods x n`.
    actions: Vec<f64>,
    pub seed: u64,
    pub burn_in: usize,
    pub measurement_noise_var: f64,
}

impl PanelData {
    pub fn new(states: Vec<f64>, actions: Vec<Vec<f64>>) -> Result<Self> {
        if states.len() != actions.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} states for {} action rows",
                states.len(),
                actions.len()
            )));
        }
        let n = actions.first().map_or(0, Vec::len);
        if actions.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch("ragged action rows".into()));
        }
        let actions: Vec<f64> = actions.into_iter().flatten().collect();
        if !states.iter().chain(&actions).all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("panel entries must be finite".into()));
        }
        Ok(Self {
            n,
            states,
            actions,
            seed: 0,
            burn_in: 0,
            measurement_noise_var: 0.0,
        })
    }

    pub fn periods(&self) -> usize {
        self.states.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn state(&self, t: usize) -> f64 {
        self.states[t]
    }

    pub fn actions(&self, t: usize) -> &[f64] {
        &self.actions[t * self.n..(t + 1) * self.n]
    }

    pub fn action(&self, t: usize, i: usize) -> f64 {
        self.actions[t * self.n + i]
    }

    pub(crate) fn actions_mut(&mut self) -> &mut [f64] {
        &mut self.actions
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,theta");
        for i in 0..self.n {
            let _ = write!(out, ",a_{i}");
        }
        out.push('\n');
        for t in 0..self.periods() {
            let _ = write!(out, "{t},{}", crate::fmt_num(self.states[t]));
            for &a in self.actions(t) {
                out.push(',');
                out.push_str(&crate::fmt_num(a));
            }
            out.push('\n');
        }
        out
    }

    /// Reads a panel written by [`PanelData::to_csv`]. Seed, burn-in and
    /// noise variance are not stored in the file and come back as zero.
    pub fn from_csv(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: "panel".into(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty panel".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[0] != "t" || cols[1] != "theta" {
            return Err(err(1, "header must start with `t,theta`".into()));
        }
        let n = cols.len() - 2;
        let mut states = Vec::new();
        let mut actions = Vec::new();
        for (k, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != n + 2 {
                return Err(err(k + 1, format!("expected {} fields, got {}", n + 2, fields.len())));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|_| err(k + 1, format!("invalid number `{s}`")));
            states.push(parse(fields[1])?);
            actions.push(fields[2..].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?);
        }
        if actions.is_empty() {
            return Ok(Self {
                n,
                ..Self::new(Vec::new(), Vec::new())?
            });
        }
        Self::new(states, actions)
    }
}

/// `max(1000, ceil(10 / (1 - |rho|)))`; 1000 when `|rho| = 1`.
pub fn default_burn_in(rho: f64) -> usize {
    let gap = 1.0 - rho.abs();
    if gap <= 0.0 {
        return 1000;
    }
    // the tolerance keeps e.g. 1 - 0.9999 from rounding up an extra period
    1000usize.max((10.0 / gap * (1.0 - 1e-12)).ceil() as usize)
}

/// Simulates `burn_in + periods` periods of play under fixed weights and
/// keeps the last `periods`. Actions before the first period are zero.
pub fn simulate_paths(
    w: &WeightProfile,
    net: &Network,
    sig: &SignalProfile,
    env: &Environment,
    periods: usize,
    burn_in: usize,
    seed: u64,
) -> Result<PanelData> {
    let n = net.n();
    let m = env.memory();
    if sig.len() != n {
        return Err(Error::DimensionMismatch(format!("{} signal variances for {n} nodes", sig.len())));
    }
    if periods == 0 {
        return Err(Error::InvalidParameter("need at least one period".into()));
    }
    w.check_support(net, m)?;
    let rho = env.rho();
    let rho_pow: Vec<f64> = (0..=m).map(|l| rho.powi(l as i32)).collect();
    let sd: Vec<f64> = sig.as_slice().iter().map(|s| s.sqrt()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = if rho.abs() < 1.0 {
        let z: f64 = rng.sample(StandardNormal);
        z / (1.0 - rho * rho).sqrt()
    } else {
        0.0
    };
    // history[l-1] holds a_{t-l}
    let mut history = vec![vec![0.0; n]; m];
    let mut states = Vec::with_capacity(periods);
    let mut actions = Vec::with_capacity(periods * n);
    let mut current = vec![0.0; n];
    for t in 0..burn_in + periods {
        let nu: f64 = rng.sample(StandardNormal);
        theta = rho * theta + nu;
        for i in 0..n {
            let eta: f64 = rng.sample(StandardNormal);
            let mut a = w.own_signal(i) * (theta + sd[i] * eta);
            for s in w.social(i) {
                a += s.weight * rho_pow[s.lag] * history[s.lag - 1][s.node];
            }
            current[i] = a;
        }
        history.rotate_right(1);
        history[0].copy_from_slice(&current);
        if t >= burn_in {
            states.push(theta);
            actions.extend_from_slice(&current);
        }
    }
    if !actions.iter().all(|a| a.is_finite()) {
        return Err(Error::NonContractive("simulated actions overflowed".into()));
    }
    Ok(PanelData {
        n,
        states,
        actions,
        seed,
        burn_in,
        measurement_noise_var: 0.0,
    })
}

/// Sample covariance of the stacked errors together with batch-means
/// standard errors of every entry.
#[derive(Debug, Clone)]
pub struct EmpiricalCov {
    pub cov: CovMatrix,
    pub stderr: DMatrix<f64>,
    pub samples: usize,
}

fn error_vector(panel: &PanelData, rho_pow: &[f64], t: usize, out: &mut DVector<f64>) {
    let n = panel.n();
    let theta = panel.state(t);
    for (lag, &p) in rho_pow.iter().enumerate() {
        let row = panel.actions(t - lag);
        for i in 0..n {
            out[lag * n + i] = p * row[i] - theta;
        }
    }
}

struct Moments {
    count: usize,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self {
            count: 0,
            sum: DVector::zeros(d),
            outer: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, e: &DVector<f64>) {
        self.count += 1;
        self.sum += e;
        self.outer.syger(1.0, e, e, 1.0);
    }

    fn covariance(&self) -> DMatrix<f64> {
        let k = self.count as f64;
        let mean = &self.sum / k;
        let mut c = self.outer.clone();
        c.syger(-k, &mean, &mean, 1.0);
        c /= k - 1.0;
        c.fill_upper_triangle_with_lower_triangle();
        c
    }
}

const BATCHES: usize = 50;

/// Covariance of `rho^l a_{i,t-l} - theta_t` over every period with a full
/// lag history, using the `N - 1` normalization.
pub fn empirical_cov(panel: &PanelData, env: &Environment) -> Result<CovMatrix> {
    Ok(empirical_cov_with_stderr(panel, env)?.cov)
}

/// As [`empirical_cov`], with standard errors from 50 contiguous batches
/// (fewer when the panel is short).
pub fn empirical_cov_with_stderr(panel: &PanelData, env: &Environment) -> Result<EmpiricalCov> {
    let (n, m) = (panel.n(), env.memory());
    let required = m + 2;
    if panel.periods() < required {
        return Err(Error::InsufficientPeriods {
            available: panel.periods(),
            required,
        });
    }
    let d = n * m;
    let rho_pow: Vec<f64> = (0..m).map(|l| env.rho().powi(l as i32)).collect();
    let usable = panel.periods() - (m - 1);
    let batches = BATCHES.min(usable / 2).max(1);
    let per_batch = usable / batches;
    let mut total = Moments::new(d);
    let mut batch_covs = Vec::with_capacity(batches);
    let mut batch = Moments::new(d);
    let mut e = DVector::zeros(d);
    for (k, t) in ((m - 1)..panel.periods()).enumerate() {
        error_vector(panel, &rho_pow, t, &mut e);
        total.push(&e);
        batch.push(&e);
        // trailing periods join the last batch
        if batch.count == per_batch && batch_covs.len() + 1 < batches || k + 1 == usable {
            batch_covs.push(batch.covariance());
            batch = Moments::new(d);
        }
    }
    let cov = total.covariance();
    let b = batch_covs.len() as f64;
    let stderr = if batch_covs.len() < 2 {
        DMatrix::from_element(d, d, f64::INFINITY)
    } else {
        let mean = batch_covs.iter().fold(DMatrix::zeros(d, d), |acc, c| acc + c) / b;
        let var = batch_covs
            .iter()
            .fold(DMatrix::zeros(d, d), |acc, c| acc + (c - &mean).map(|x| x * x))
            / (b - 1.0);
        var.map(|v| (v / b).sqrt())
    };
    Ok(EmpiricalCov {
        cov: CovMatrix::new(n, m, cov)?,
        stderr,
        samples: usable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{solve_equilibrium, SolveOptions};
    use crate::network::gen_complete;

    fn isolated(n: usize) -> Network {
        Network::new(vec![Vec::new(); n], true).unwrap()
    }

    #[test]
    fn burn_in_rule() {
        assert_eq!(default_burn_in(0.9), 1000);
        assert_eq!(default_burn_in(0.999), 10_000);
        assert_eq!(default_burn_in(1.0), 1000);
        assert_eq!(default_burn_in(-0.9999), 100_000);
    }

    #[test]
    fn same_seed_same_panel() {
        let net = gen_complete(3, false).unwrap();
        let sig = SignalProfile::new(vec![1.0, 2.0, 3.0]).unwrap();
        let env = Environment::new(0.8, 2).unwrap();
        let w = WeightProfile::symmetric(&net, 2, 0.4);
        let a = simulate_paths(&w, &net, &sig, &env, 500, 50, 7).unwrap();
        let b = simulate_paths(&w, &net, &sig, &env, 500, 50, 7).unwrap();
        let c = simulate_paths(&w, &net, &sig, &env, 500, 50, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.states(), c.states());
    }

    #[test]
    fn own_signal_play_has_signal_variance() {
        let sig = SignalProfile::new(vec![1.0, 4.0]).unwrap();
        let env = Environment::new(0.9, 1).unwrap();
        let panel = simulate_paths(&WeightProfile::autarky(2), &isolated(2), &sig, &env, 100_000, 1000, 3).unwrap();
        let emp = empirical_cov_with_stderr(&panel, &env).unwrap();
        for i in 0..2 {
            let gap = (emp.cov.variance(i) - sig.get(i)).abs();
            assert!(gap < 3.0 * emp.stderr[(i, i)], "agent {i}: gap {gap}");
        }
    }

    #[test]
    fn actions_equal_to_state_have_zero_error() {
        let panel = PanelData::new(vec![0.3, -1.0, 2.0, 0.5], vec![vec![0.3, 0.3], vec![-1.0, -1.0], vec![2.0, 2.0], vec![0.5, 0.5]]).unwrap();
        let env = Environment::new(0.9, 1).unwrap();
        let v = empirical_cov(&panel, &env).unwrap();
        assert!(v.matrix().iter().all(|&x| x == 0.0));
        assert!(matches!(
            empirical_cov(&panel, &Environment::new(0.9, 3).unwrap()),
            Err(Error::InsufficientPeriods { available: 4, required: 5 })
        ));
    }

    #[test]
    fn lagged_errors_follow_shift() {
        // with own-signal play, rho a_{t-1} - theta_t = rho eta_{t-1} - nu_t
        let sig = SignalProfile::uniform(1, 2.0).unwrap();
        let env = Environment::new(0.5, 2).unwrap();
        let panel = simulate_paths(&WeightProfile::autarky(1), &isolated(1), &sig, &env, 200_000, 1000, 11).unwrap();
        let emp = empirical_cov_with_stderr(&panel, &env).unwrap();
        let expected = 0.25 * 2.0 + 1.0;
        assert!((emp.cov.get(0, 1, 0, 1) - expected).abs() < 4.0 * emp.stderr[(1, 1)]);
        // Cov(s_t - theta_t, rho s_{t-1} - theta_t) = 0
        assert!(emp.cov.get(0, 0, 0, 1).abs() < 4.0 * emp.stderr[(0, 1)]);
    }

    #[test]
    fn pair_equilibrium_matches_closed_form() {
        let net = gen_complete(2, false).unwrap();
        let sig = SignalProfile::uniform(2, 1.0).unwrap();
        let env = Environment::new(0.0, 1).unwrap();
        let eq = solve_equilibrium(&net, &sig, &env, &SolveOptions::default()).unwrap();
        let panel = simulate_paths(&eq.weights, &net, &sig, &env, 2_000_000, 1000, 5).unwrap();
        let v = empirical_cov(&panel, &env).unwrap();
        let expected = [[0.5, 0.25], [0.25, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                let rel = (v.matrix()[(i, j)] - expected[i][j]).abs() / expected[i][j];
                assert!(rel < 0.02, "({i},{j}) relative gap {rel}");
            }
        }
    }

    #[test]
    fn csv_roundtrip() {
        let net = gen_complete(3, false).unwrap();
        let sig = SignalProfile::uniform(3, 1.0).unwrap();
        let env = Environment::new(0.7, 1).unwrap();
        let panel = simulate_paths(&WeightProfile::symmetric(&net, 1, 0.5), &net, &sig, &env, 20, 10, 1).unwrap();
        let text = panel.to_csv();
        assert!(text.starts_with("t,theta,a_0,a_1,a_2\n"));
        let back = PanelData::from_csv(&text).unwrap();
        assert_eq!(back.periods(), 20);
        for t in 0..20 {
            assert!((back.state(t) - panel.state(t)).abs() <= 1e-11 * panel.state(t).abs().max(1.0));
            assert!((back.action(t, 2) - panel.action(t, 2)).abs() <= 1e-11 * panel.action(t, 2).abs().max(1.0));
        }
        assert!(PanelData::from_csv("x,theta\n").is_err());
    }
}
