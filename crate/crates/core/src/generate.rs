//! Seeded tensor generators.
//!
//! The stream is ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64`).
//! Uniforms are the generator's standard `f64` samples in `[0, 1)`. Gaussians
//! come from Box-Muller in a fixed pairing order: each pair of uniforms
//! `(u1, u2)` yields `r cos(2 pi u2)` first and `r sin(2 pi u2)` second, with
//! `u1` mapped to `(0, 1]` so the logarithm is finite. Tensors are filled in
//! storage order.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::geometry::Disentangler;
use crate::tensor::{apply_a_inv_unchecked, unflatten_m_inv, Dims, Tensor4};
use crate::Matrix;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    /// Fills a matrix row by row.
    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| self.gaussian()).collect();
        Matrix::from_row_slice(rows, cols, &data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    Gaussian,
    /// Uniform entries in `[0, 1)`.
    Uniform,
}

/// Standard Gaussian tensor scaled to unit Frobenius norm.
pub fn gen_random(dims: Dims, seed: u64) -> Tensor4 {
    gen_random_with(dims, seed, Distribution::Gaussian)
}

pub fn gen_random_with(dims: Dims, seed: u64, dist: Distribution) -> Tensor4 {
    let mut rng = Rng::new(seed);
    let data: Vec<f64> = (0..dims.len())
        .map(|_| match dist {
            Distribution::Gaussian => rng.gaussian(),
            Distribution::Uniform => rng.uniform(),
        })
        .collect();
    Tensor4::new(dims, data)
        .expect("generated entries are finite")
        .normalized()
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal(n: usize, rng: &mut Rng) -> Matrix {
    let g = rng.gaussian_matrix(n, n);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Parameters of a tensor with a known rank-`k` disentangler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedSpec {
    pub dims: Dims,
    pub k: usize,
    pub seed: u64,
}

/// Draws `q_true`, then `Y` (`lc x k`), then `W` (`rb x k`), and returns
/// `X = q_true^T A^-1(Y W^T)` scaled to unit norm together with `q_true`.
pub fn gen_planted(spec: &PlantedSpec) -> Result<(Tensor4, Disentangler)> {
    let dims = spec.dims;
    let (lc, rb) = dims.unfolded_shape();
    if spec.k == 0 || spec.k > lc.min(rb) {
        return Err(Error::InvalidArgument(format!(
            "planted rank {} outside 1..={}",
            spec.k,
            lc.min(rb)
        )));
    }
    let mut rng = Rng::new(spec.seed);
    let q_true = random_orthogonal(dims.n(), &mut rng);
    let y = rng.gaussian_matrix(lc, spec.k);
    let w = rng.gaussian_matrix(rb, spec.k);
    let x = q_true.transpose() * apply_a_inv_unchecked(&(y * w.transpose()), dims);
    let t = unflatten_m_inv(&x, dims)?.normalized();
    Ok((t, Disentangler::new(q_true)?))
}
