//! Closed-form benchmarks and large-network limits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::CovMatrix;
use crate::network::SignalProfile;

/// Error variance with the agent's own signal and exact knowledge of the
/// previous state: `(sigma^-2 + 1)^-1`.
pub fn benchmark_variance(sigma2: f64) -> f64 {
    1.0 / (1.0 / sigma2 + 1.0)
}

/// `V_ii / benchmark_variance(sigma_i^2)` for every agent.
pub fn aggregation_ratio(v: &CovMatrix, sig: &SignalProfile) -> Result<Vec<f64>> {
    if v.n() != sig.len() {
        return Err(Error::DimensionMismatch(format!(
            "covariance for {} agents, {} signal variances",
            v.n(),
            sig.len()
        )));
    }
    Ok((0..v.n())
        .map(|i| v.variance(i) / benchmark_variance(sig.get(i)))
        .collect())
}

/// Limit variance and covariance of equilibrium errors on large complete
/// networks with a common signal variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitConstants {
    pub v_inf: f64,
    pub cov_inf: f64,
}

impl LimitConstants {
    /// Largest deviation from the two defining equations.
    pub fn residual(&self, sigma2: f64, rho: f64) -> f64 {
        let social = 1.0 / (rho * rho * self.cov_inf + 1.0);
        let denom = 1.0 / sigma2 + social;
        let v = 1.0 / denom;
        let c = social / (denom * denom);
        (v - self.v_inf).abs().max((c - self.cov_inf).abs())
    }
}

fn require_stationary(rho: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "limit requires |rho| < 1, got {rho}"
        )));
    }
    Ok(())
}

/// Solves `Cov = x / (sigma^-2 + x)^2` with `x = (rho^2 Cov + 1)^-1` by
/// bisection on `(0, sigma^2)`, where the map minus the identity changes
/// sign exactly once.
pub fn homogeneous_limit(sigma2: f64, rho: f64) -> Result<LimitConstants> {
    require_stationary(rho)?;
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "signal variance must be positive, got {sigma2}"
        )));
    }
    let precision = 1.0 / sigma2;
    let gap = |c: f64| {
        let x = 1.0 / (rho * rho * c + 1.0);
        x / ((precision + x) * (precision + x)) - c
    };
    let (mut lo, mut hi) = (0.0f64, sigma2);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-13 * hi.max(1.0) * 1e-3 {
            break;
        }
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let cov_inf = 0.5 * (lo + hi);
    let v_inf = 1.0 / (precision + 1.0 / (rho * rho * cov_inf + 1.0));
    Ok(LimitConstants { v_inf, cov_inf })
}

/// Large-network variances of naive agents with two signal types in equal
/// shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveLimits {
    pub v_a: f64,
    pub v_b: f64,
    /// Variance of the naive social estimate of the previous state.
    pub kappa2: f64,
}

/// Naive agents average observed actions by signal precision and believe the
/// result is nearly exact. With `s = sigma^-2` and each action equal to
/// `(r + s_k s_i) / (1 + s_k)`, the social estimate error `r - theta`
/// has variance `kappa^2` solving
/// `kappa^2 = rho^2 kappa^2 [(s_A/(1+s_A) + s_B/(1+s_B)) / (s_A + s_B)]^2 + 1`.
pub fn naive_limit(sigma_a2: f64, sigma_b2: f64, rho: f64) -> Result<NaiveLimits> {
    require_stationary(rho)?;
    for s in [sigma_a2, sigma_b2] {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "signal variance must be positive, got {s}"
            )));
        }
    }
    let (pa, pb) = (1.0 / sigma_a2, 1.0 / sigma_b2);
    let loading = (pa / (1.0 + pa) + pb / (1.0 + pb)) / (pa + pb);
    let kappa2 = 1.0 / (1.0 - rho * rho * loading * loading);
    Ok(NaiveLimits {
        v_a: (kappa2 + pa) / ((1.0 + pa) * (1.0 + pa)),
        v_b: (kappa2 + pb) / ((1.0 + pb) * (1.0 + pb)),
        kappa2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_values() {
        assert_eq!(benchmark_variance(1.0), 0.5);
        assert!((benchmark_variance(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((benchmark_variance(1e12) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn ratio_of_isolated_agent() {
        let v = CovMatrix::from_diagonal(&[1.0, 0.5], 1);
        let sig = SignalProfile::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(aggregation_ratio(&v, &sig).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn homogeneous_closed_forms_at_rho_zero() {
        let l = homogeneous_limit(1.0, 0.0).unwrap();
        assert!((l.v_inf - 0.5).abs() < 1e-13);
        assert!((l.cov_inf - 0.25).abs() < 1e-13);
        let l = homogeneous_limit(2.0, 0.0).unwrap();
        assert!((l.v_inf - 2.0 / 3.0).abs() < 1e-13);
        assert!((l.cov_inf - 4.0 / 9.0).abs() < 1e-13);
    }

    #[test]
    fn homogeneous_frozen_values() {
        // 30-digit bisection on the same bracket
        let l = homogeneous_limit(2.0, 0.9).unwrap();
        assert!((l.v_inf - 0.820750252684872254981).abs() < 1e-12);
        assert!((l.cov_inf - 0.483934764043731426883).abs() < 1e-12);
        let l = homogeneous_limit(1.0, 0.9).unwrap();
        assert!((l.v_inf - 0.545622673949006949637).abs() < 1e-12);
        assert!((l.cov_inf - 0.247918571621742602623).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_resubstitution() {
        for &(s2, rho) in &[(0.1, 0.3), (1.0, 0.9), (7.0, -0.95), (50.0, 0.999)] {
            let l = homogeneous_limit(s2, rho).unwrap();
            assert!(l.residual(s2, rho) < 1e-12, "sigma2={s2} rho={rho}");
            assert!(l.cov_inf > 0.0 && l.cov_inf < l.v_inf);
        }
        assert!(homogeneous_limit(1.0, 1.0).is_err());
    }

    #[test]
    fn naive_reduces_to_benchmark_at_rho_zero() {
        let l = naive_limit(1.0, 1.0, 0.0).unwrap();
        assert_eq!(l.kappa2, 1.0);
        assert_eq!(l.v_a, 0.5);
        let l = naive_limit(1.0, 4.0, 0.0).unwrap();
        assert!((l.v_a - 0.5).abs() < 1e-15);
        assert!((l.v_b - 0.8).abs() < 1e-15);
    }

    #[test]
    fn naive_frozen_values() {
        let l = naive_limit(3.0, 3.0, 0.9).unwrap();
        assert!((l.v_a - 1.220795063145809414466).abs() < 1e-12);
        assert!((l.kappa2 - 1.836969001148105625718).abs() < 1e-12);
        assert!(l.v_a > homogeneous_limit(3.0, 0.9).unwrap().v_inf);
        let l = naive_limit(2.0, 4.0, 0.9).unwrap();
        assert!((l.v_a - 0.975007527853056308341).abs() < 1e-12);
        assert!((l.v_b - 1.244010840108401084011).abs() < 1e-12);
        assert!(naive_limit(2.0, 4.0, -1.0).is_err());
    }
}
