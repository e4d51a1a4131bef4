//! Symmetric solves for the observation-covariance blocks.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

/// Condition estimate above which a ridge is added before solving.
pub const RIDGE_TRIGGER: f64 = 1e12;
/// Relative size of the ridge, scaled by the mean diagonal.
pub const RIDGE_SCALE: f64 = 1e-12;
/// Beyond this even the ridged system is treated as singular.
const SINGULAR_LIMIT: f64 = 1e16;

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl Factor {
    fn new(a: &DMatrix<f64>) -> Option<Self> {
        if let Some(chol) = Cholesky::new(a.clone()) {
            return Some(Factor::Cholesky(chol));
        }
        // Covariance blocks are PSD in exact arithmetic; rounding can make a
        // nearly singular one fail Cholesky, in which case pivoted LU still
        // gives a usable solve.
        let lu = a.clone().lu();
        lu.is_invertible().then_some(Factor::Lu(lu))
    }

    fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Factor::Cholesky(c) => Some(c.solve(b)),
            Factor::Lu(lu) => lu.solve(b),
        }
    }
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Hager's estimate of `||A^-1||_1` for symmetric `A`.
fn inverse_norm1_estimate(f: &Factor, dim: usize) -> Option<f64> {
    let mut x = DVector::from_element(dim, 1.0 / dim as f64);
    let mut estimate = 0.0;
    for _ in 0..5 {
        let y = f.solve(&x)?;
        estimate = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = f.solve(&xi)?;
        let (j, zmax) = z
            .iter()
            .map(|v| v.abs())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(dim);
        x[j] = 1.0;
    }
    Some(estimate)
}

#[derive(Debug, Clone)]
pub struct OnesSolve {
    /// `A^-1 1`.
    pub solution: DVector<f64>,
    /// 1-norm condition estimate of the matrix actually factorized.
    pub condition: f64,
    pub ridged: bool,
}

/// Solves `A x = 1` for a symmetric block, adding a small ridge when the
/// condition estimate exceeds [`RIDGE_TRIGGER`]. Returns the condition
/// estimate as the error when the system stays singular.
pub fn solve_ones(a: &DMatrix<f64>) -> Result<OnesSolve, f64> {
    let dim = a.nrows();
    let ones = DVector::from_element(dim, 1.0);
    let attempt = |m: &DMatrix<f64>| -> Option<(Factor, f64)> {
        let f = Factor::new(m)?;
        let cond = norm1(m) * inverse_norm1_estimate(&f, dim)?;
        Some((f, cond))
    };

    let first = attempt(a);
    if let Some((f, cond)) = &first {
        if cond.is_finite() && *cond <= RIDGE_TRIGGER {
            if let Some(solution) = f.solve(&ones) {
                return Ok(OnesSolve {
                    solution,
                    condition: *cond,
                    ridged: false,
                });
            }
        }
    }

    let ridge = RIDGE_SCALE * a.trace() / dim as f64;
    let mut ridged = a.clone();
    for k in 0..dim {
        ridged[(k, k)] += ridge;
    }
    match attempt(&ridged) {
        Some((f, cond)) if cond.is_finite() && cond < SINGULAR_LIMIT => {
            let solution = f.solve(&ones).ok_or(cond)?;
            if solution.iter().all(|v| v.is_finite()) {
                Ok(OnesSolve {
                    solution,
                    condition: cond,
                    ridged: true,
                })
            } else {
                Err(cond)
            }
        }
        Some((_, cond)) => Err(cond),
        None => Err(first.map(|(_, c)| c).unwrap_or(f64::INFINITY)),
    }
}
