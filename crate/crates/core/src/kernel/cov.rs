use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Covariance of the stacked action errors `rho^l a_{i,t-l} - theta_t` for
/// nodes `i` and lags `l in 0..m`.
///
/// Entries are stored lag-major: the flat index of `(i, l)` is `l * n + i`,
/// so the lag-0 block (current actions) is the leading `n x n` block.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    n: usize,
    m: usize,
    entries: DMatrix<f64>,
}

impl CovMatrix {
    pub fn new(n: usize, m: usize, entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != n * m || entries.ncols() != n * m {
            return Err(Error::DimensionMismatch(format!(
                "covariance for n={n}, m={m} must be {0}x{0}, got {1}x{2}",
                n * m,
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(Self { n, m, entries })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            entries: DMatrix::zeros(n * m, n * m),
        }
    }

    /// Lag-0 block set to `diag`, every other entry zero.
    pub fn from_diagonal(diag: &[f64], m: usize) -> Self {
        let mut v = Self::zeros(diag.len(), m);
        for (i, &d) in diag.iter().enumerate() {
            v.entries[(i, i)] = d;
        }
        v
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn memory(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    #[inline]
    pub fn index(&self, node: usize, lag: usize) -> usize {
        lag * self.n + node
    }

    /// Entry for `(i, l)` and `(j, l')`.
    pub fn get(&self, i: usize, lag_i: usize, j: usize, lag_j: usize) -> f64 {
        self.entries[(self.index(i, lag_i), self.index(j, lag_j))]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// Current-period error variance of every node.
    pub fn variances(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.entries[(i, i)]).collect()
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.entries[(i, i)]
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|x| x.is_finite())
    }

    pub fn sup_distance(&self, other: &CovMatrix) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for c in 0..d {
            for r in (c + 1)..d {
                worst = worst.max((self.entries[(r, c)] - self.entries[(c, r)]).abs());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.entries + self.entries.transpose()) * 0.5;
        SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest violation of `|V_ab| <= sqrt(V_aa V_bb)`.
    pub fn cauchy_schwarz_excess(&self) -> f64 {
        let d = self.dim();
        let mut worst = f64::NEG_INFINITY;
        for a in 0..d {
            for b in 0..d {
                let bound = (self.entries[(a, a)] * self.entries[(b, b)]).max(0.0).sqrt();
                worst = worst.max(self.entries[(a, b)].abs() - bound);
            }
        }
        worst
    }

    pub(crate) fn entries_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.entries
    }

    /// Makes the matrix exactly symmetric by averaging with its transpose.
    pub(crate) fn symmetrize(&mut self) {
        let d = self.dim();
        for c in 0..d {
            for r in (c + 1)..d {
                let avg = 0.5 * (self.entries[(r, c)] + self.entries[(c, r)]);
                self.entries[(r, c)] = avg;
                self.entries[(c, r)] = avg;
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CovMatrixDoc {
    n: usize,
    m: usize,
    /// Row-major, lag-major indexing.
    entries: Vec<f64>,
}

impl Serialize for CovMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        let mut entries = Vec::with_capacity(d * d);
        for r in 0..d {
            for c in 0..d {
                entries.push(self.entries[(r, c)]);
            }
        }
        CovMatrixDoc {
            n: self.n,
            m: self.m,
            entries,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CovMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = CovMatrixDoc::deserialize(deserializer)?;
        let d = doc.n * doc.m;
        if doc.entries.len() != d * d {
            return Err(serde::de::Error::custom(format!(
                "expected {} entries, got {}",
                d * d,
                doc.entries.len()
            )));
        }
        let entries = DMatrix::from_row_slice(d, d, &doc.entries);
        Ok(CovMatrix {
            n: doc.n,
            m: doc.m,
            entries,
        })
    }
}
