//! Spectral objectives `f(Q) = sum_i phi(sigma_i(A(QX)))`.

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{Dims, Flattened};
use crate::Matrix;

/// Floor applied to singular values inside `phi'` and `phi''` where the
/// derivative is singular at zero.
pub const SIGMA_FLOOR: f64 = 1e-14;

/// Relative gap `sigma_k - sigma_{k+1} <= DEGENERACY_GAP * sigma_1` below
/// which the rank-k objective is reported as non-differentiable.
pub const DEGENERACY_GAP: f64 = 1e-10;

/// A function of the sorted singular values, applied termwise. `index` is the
/// 0-based position of `sigma` in the descending spectrum.
pub trait SpectralFunction {
    fn value(&self, index: usize, sigma: f64) -> f64;
    fn first(&self, index: usize, sigma: f64) -> f64;
    fn second(&self, index: usize, sigma: f64) -> f64;

    /// Whether the objective is non-differentiable at this spectrum.
    fn is_degenerate(&self, _sigma: &[f64]) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectivePhi {
    /// Squared tail beyond rank `k`: the truncation error `c_k`.
    TruncationRank(usize),
    /// `phi(t) = -t^2 ln t^2`.
    VonNeumann,
    /// `phi(t) = t^(2 alpha)` for `alpha` in (0, 1), the monotone surrogate of
    /// the Renyi-alpha entropy.
    Renyi(f64),
}

impl ObjectivePhi {
    pub fn renyi(alpha: f64) -> Result<Self> {
        let phi = ObjectivePhi::Renyi(alpha);
        phi.validate(usize::MAX)?;
        Ok(phi)
    }

    /// Checks parameters against a spectrum of length `m`.
    pub fn validate(&self, m: usize) -> Result<()> {
        match *self {
            ObjectivePhi::TruncationRank(k) if k > m => Err(Error::InvalidArgument(format!(
                "truncation rank {k} exceeds number of singular values {m}"
            ))),
            ObjectivePhi::Renyi(alpha) if !(alpha > 0.0 && alpha < 1.0) => Err(
                Error::InvalidArgument(format!("Renyi alpha must lie in (0,1), got {alpha}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn rank(&self) -> Option<usize> {
        match *self {
            ObjectivePhi::TruncationRank(k) => Some(k),
            _ => None,
        }
    }
}

impl SpectralFunction for ObjectivePhi {
    fn value(&self, index: usize, t: f64) -> f64 {
        match *self {
            ObjectivePhi::TruncationRank(k) => {
                if index >= k {
                    t * t
                } else {
                    0.0
                }
            }
            ObjectivePhi::VonNeumann => {
                if t > 0.0 {
                    let t2 = t * t;
                    -t2 * t2.ln()
                } else {
                    0.0
                }
            }
            ObjectivePhi::Renyi(alpha) => t.powf(2.0 * alpha),
        }
    }

    fn first(&self, index: usize, t: f64) -> f64 {
        match *self {
            ObjectivePhi::TruncationRank(k) => {
                if index >= k {
                    2.0 * t
                } else {
                    0.0
                }
            }
            ObjectivePhi::VonNeumann => {
                if t > 0.0 {
                    -2.0 * t * ((t * t).ln() + 1.0)
                } else {
                    0.0
                }
            }
            ObjectivePhi::Renyi(alpha) => {
                let t = t.max(SIGMA_FLOOR);
                2.0 * alpha * t.powf(2.0 * alpha - 1.0)
            }
        }
    }

    fn second(&self, index: usize, t: f64) -> f64 {
        match *self {
            ObjectivePhi::TruncationRank(k) => {
                if index >= k {
                    2.0
                } else {
                    0.0
                }
            }
            ObjectivePhi::VonNeumann => {
                let t = t.max(SIGMA_FLOOR);
                -2.0 * (t * t).ln() - 6.0
            }
            ObjectivePhi::Renyi(alpha) => {
                let t = t.max(SIGMA_FLOOR);
                2.0 * alpha * (2.0 * alpha - 1.0) * t.powf(2.0 * alpha - 2.0)
            }
        }
    }

    fn is_degenerate(&self, sigma: &[f64]) -> bool {
        match *self {
            ObjectivePhi::TruncationRank(k) if k >= 1 && k < sigma.len() => {
                sigma[k - 1] - sigma[k] <= DEGENERACY_GAP * sigma[0]
            }
            _ => false,
        }
    }
}

/// Descending singular values of `A(QX)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    pub values: Vec<f64>,
    pub dims: Dims,
}

impl SingularSpectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.values.iter().rev().map(|s| s * s).sum()
    }

    /// `sum_{i > k} sigma_i^2`.
    pub fn tail(&self, k: usize) -> f64 {
        tail_sum(&self.values, k)
    }

    /// Squared singular values scaled to sum to one.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let total = self.sum_of_squares();
        if total <= 0.0 {
            return Err(Error::Domain("entropy of an all-zero spectrum".into()));
        }
        Ok(self.values.iter().map(|s| s * s / total).collect())
    }
}

/// Sum of squares of `sigma[k..]`, accumulated smallest first.
pub fn tail_sum(sigma: &[f64], k: usize) -> f64 {
    sigma.iter().skip(k).rev().map(|s| s * s).sum()
}

fn check_q(q: &Matrix, flat: &Flattened) -> Result<()> {
    let n = flat.dims().n();
    if q.shape() != (n, n) {
        return Err(Error::shape(
            format!("{n}x{n} disentangler"),
            format!("{}x{}", q.nrows(), q.ncols()),
        ));
    }
    Ok(())
}

pub fn spectrum(q: &Matrix, flat: &Flattened) -> Result<SingularSpectrum> {
    check_q(q, flat)?;
    let values = linalg::singular_values(&flat.unfold_with(q))?;
    Ok(SingularSpectrum {
        values,
        dims: flat.dims(),
    })
}

/// Truncation error `c_k(Q) = sum_{i=k+1}^m sigma_i^2(A(QX))`.
pub fn trunc_error_ck(q: &Matrix, flat: &Flattened, k: usize) -> Result<f64> {
    let m = flat.dims().m();
    if k > m {
        return Err(Error::InvalidArgument(format!(
            "truncation rank {k} exceeds {m}"
        )));
    }
    Ok(spectrum(q, flat)?.tail(k))
}

pub fn objective_from_spectrum<F: SpectralFunction + ?Sized>(sigma: &[f64], phi: &F) -> f64 {
    // Smallest terms first keeps tails like c_k accurate.
    sigma
        .iter()
        .enumerate()
        .rev()
        .map(|(i, &s)| phi.value(i, s))
        .sum()
}

pub fn objective_f(q: &Matrix, flat: &Flattened, phi: &ObjectivePhi) -> Result<f64> {
    phi.validate(flat.dims().m())?;
    let sp = spectrum(q, flat)?;
    Ok(objective_from_spectrum(&sp.values, phi))
}

/// `1/(1-alpha) ln sum p_i^alpha` with `p_i = sigma_i^2 / sum sigma^2`.
pub fn renyi_entropy(sp: &SingularSpectrum, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Renyi alpha must lie in (0,1), got {alpha}"
        )));
    }
    let p = sp.probabilities()?;
    let s: f64 = p.iter().rev().map(|v| v.powf(alpha)).sum();
    Ok(s.ln() / (1.0 - alpha))
}

/// `-sum p_i ln p_i` with `p_i = sigma_i^2 / sum sigma^2` and `0 ln 0 = 0`.
pub fn von_neumann_entropy(sp: &SingularSpectrum) -> Result<f64> {
    let p = sp.probabilities()?;
    Ok(p
        .iter()
        .rev()
        .filter(|&&v| v > 0.0)
        .map(|v| -v * v.ln())
        .sum())
}
