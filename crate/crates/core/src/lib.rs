//! Stationary linear equilibria of social learning about an AR(1) state.
//!
//! Agents on a directed observation network each receive a private signal
//! of the current state and see their neighbors' recent actions. The crate
//! computes the action-error covariance at equilibrium (Bayesian or naive
//! play), steady states of arbitrary fixed linear strategies, planner-optimal
//! group-symmetric strategies, large-network limits, Monte Carlo panels and
//! least-squares recovery of strategies from such panels.

pub mod asymptotics;
pub mod behavior;
pub mod econometrics;
pub mod error;
pub mod kernel;
pub mod montecarlo;
pub mod network;

pub use error::{Error, Result};

/// Formats a number with 12 significant digits, in the style of `%.12g`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    const DIGITS: i32 = 12;
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
