//! Calculus on the orthogonal group O(n), n = lr, viewed as an embedded
//! submanifold of n x n matrices with the Frobenius metric.
//!
//! Tangent vectors at `Q` are matrices `E` with `Q^T E` skew-symmetric.
//! The Euclidean gradient of a spectral objective is
//! `A^-1(U phi'(Sigma) V^T) X^T`; projecting it with
//! `Proj_Q(Z) = (Z - Q Z^T Q) / 2` gives the Riemannian gradient, and
//! projecting the differential of that projected field gives the Riemannian
//! Hessian.

use crate::error::{Error, Result};
use crate::linalg::{self, SvdFactors};
use crate::objective::{objective_from_spectrum, SpectralFunction};
use crate::tensor::{apply_a_inv_unchecked, apply_a_unchecked, Flattened};
use crate::Matrix;

/// Drift tolerance on `||Q^T Q - I||_F` for a stored disentangler.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// Relative threshold below which a singular value is treated as zero in
/// pseudo-inverses (`sigma_i <= PINV_RTOL * sigma_1`).
pub const PINV_RTOL: f64 = 1e-12;

/// Relative threshold on `|sigma_j^2 - sigma_i^2| <= F_RTOL * sigma_1^2` for
/// zeroing entries of `F` and raising the degeneracy flag.
pub const F_RTOL: f64 = 1e-12;

/// Singular value gap (relative to `sigma_1`) under which the divided
/// difference of `phi'` is replaced by its limit `phi''`.
const DIVIDED_DIFF_RTOL: f64 = 1e-8;

/// An orthogonal `lr x lr` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Disentangler {
    q: Matrix,
}

impl Disentangler {
    pub fn new(q: Matrix) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::shape(
                "square matrix",
                format!("{}x{}", q.nrows(), q.ncols()),
            ));
        }
        let resid = linalg::orthogonality_residual(&q);
        if !(resid <= ORTHOGONALITY_TOL) {
            return Err(Error::InvalidArgument(format!(
                "matrix is not orthogonal: ||Q^T Q - I||_F = {resid:e}"
            )));
        }
        Ok(Disentangler { q })
    }

    pub fn identity(n: usize) -> Self {
        Disentangler {
            q: Matrix::identity(n, n),
        }
    }

    /// Wraps `q`, replacing it by its polar factor when it has drifted past
    /// [`ORTHOGONALITY_TOL`].
    pub fn reorthonormalized(q: Matrix) -> Result<Self> {
        if linalg::orthogonality_residual(&q) > ORTHOGONALITY_TOL {
            Ok(Disentangler {
                q: linalg::polar_orthogonal(&q)?,
            })
        } else {
            Ok(Disentangler { q })
        }
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.q
    }

    pub fn into_matrix(self) -> Matrix {
        self.q
    }

    pub fn orthogonality_residual(&self) -> f64 {
        linalg::orthogonality_residual(&self.q)
    }
}

/// A tangent vector `E` at some point `Q`, i.e. `Q^T E` is skew-symmetric.
/// The base point is tracked by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    e: Matrix,
}

impl TangentVector {
    pub fn zeros(n: usize) -> Self {
        TangentVector {
            e: Matrix::zeros(n, n),
        }
    }

    /// Wraps `e` without checking tangency.
    pub fn from_matrix_unchecked(e: Matrix) -> Self {
        TangentVector { e }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.e
    }

    pub fn into_matrix(self) -> Matrix {
        self.e
    }

    pub fn norm(&self) -> f64 {
        self.e.norm()
    }

    pub fn inner(&self, other: &TangentVector) -> f64 {
        self.e.dot(&other.e)
    }

    /// `||Q^T E + E^T Q||_F`, zero for an exact tangent vector.
    pub fn skewness_residual(&self, q: &Matrix) -> f64 {
        let qe = q.transpose() * &self.e;
        (&qe + qe.transpose()).norm()
    }

    pub fn is_tangent_at(&self, q: &Matrix) -> bool {
        self.skewness_residual(q) <= 1e-10 * (1.0 + self.norm())
    }
}

#[derive(Debug, Clone)]
pub struct EuclideanGradient {
    pub matrix: Matrix,
    /// Set when the objective is non-differentiable at this spectrum (a tie
    /// across the truncation rank).
    pub degenerate: bool,
}

/// `Proj_Q(Z) = (Z - Q Z^T Q) / 2`.
pub fn proj_tangent(q: &Matrix, z: &Matrix) -> TangentVector {
    let qztq = q * z.transpose() * q;
    TangentVector {
        e: (z - qztq) * 0.5,
    }
}

/// Projection-based vector transport from `T_{from} O(n)` to `T_{to} O(n)`.
pub fn transport(_from: &Matrix, to: &Matrix, e: &TangentVector) -> TangentVector {
    proj_tangent(to, &e.e)
}

fn check_point(q: &Matrix, flat: &Flattened) -> Result<()> {
    let n = flat.dims().n();
    if q.shape() != (n, n) {
        return Err(Error::shape(
            format!("{n}x{n}"),
            format!("{}x{}", q.nrows(), q.ncols()),
        ));
    }
    Ok(())
}

fn scale_columns(m: &Matrix, weights: &[f64]) -> Matrix {
    let mut out = m.clone();
    for (j, w) in weights.iter().enumerate() {
        out.column_mut(j).scale_mut(*w);
    }
    out
}

fn scale_rows(m: &Matrix, weights: &[f64]) -> Matrix {
    let mut out = m.clone();
    for (i, w) in weights.iter().enumerate() {
        out.row_mut(i).scale_mut(*w);
    }
    out
}

pub fn euclidean_gradient<F: SpectralFunction + ?Sized>(
    q: &Matrix,
    flat: &Flattened,
    phi: &F,
) -> Result<EuclideanGradient> {
    check_point(q, flat)?;
    let factors = linalg::svd(&flat.unfold_with(q))?;
    let dphi: Vec<f64> = factors
        .sigma
        .iter()
        .enumerate()
        .map(|(i, &s)| phi.first(i, s))
        .collect();
    Ok(EuclideanGradient {
        matrix: gradient_from_factors(&factors, &dphi, flat),
        degenerate: phi.is_degenerate(&factors.sigma),
    })
}

pub(crate) fn gradient_from_factors(factors: &SvdFactors, dphi: &[f64], flat: &Flattened) -> Matrix {
    let g = scale_columns(&factors.u, dphi) * factors.v.transpose();
    apply_a_inv_unchecked(&g, flat.dims()) * flat.matrix().transpose()
}

pub fn riemannian_gradient<F: SpectralFunction + ?Sized>(
    q: &Matrix,
    flat: &Flattened,
    phi: &F,
) -> Result<TangentVector> {
    let egrad = euclidean_gradient(q, flat, phi)?;
    Ok(proj_tangent(q, &egrad.matrix))
}

/// Everything at a point `Q` that Hessian-vector products reuse: the SVD of
/// `A(QX)`, derivative weights, the `F` matrix, and both gradients.
pub struct HessianWorkspace<'a, F: SpectralFunction + ?Sized> {
    q: Matrix,
    flat: &'a Flattened,
    phi: &'a F,
    pub factors: SvdFactors,
    /// `F_ij = 1/(sigma_j^2 - sigma_i^2)`, zero on the diagonal and where the
    /// denominator is below `F_RTOL * sigma_1^2`.
    pub f_matrix: Matrix,
    /// Thresholded reciprocals of the singular values.
    pub sigma_pinv: Vec<f64>,
    dphi: Vec<f64>,
    d2phi: Vec<f64>,
    /// `phi'(sigma_i) / sigma_i`, with the limiting value at `sigma_i = 0`.
    ratio: Vec<f64>,
    value: f64,
    egrad: Matrix,
    rgrad: TangentVector,
    /// The objective is non-differentiable here (tie across rank `k`).
    pub objective_degenerate: bool,
    /// Some pair of singular values is closer than the `F` threshold.
    pub f_degenerate: bool,
}

impl<'a, F: SpectralFunction + ?Sized> HessianWorkspace<'a, F> {
    pub fn new(q: &Matrix, flat: &'a Flattened, phi: &'a F) -> Result<Self> {
        check_point(q, flat)?;
        let factors = linalg::svd(&flat.unfold_with(q))?;
        let sigma = &factors.sigma;
        let m = sigma.len();
        let s1 = sigma.first().copied().unwrap_or(0.0);
        let pinv_tol = PINV_RTOL * s1;
        let f_tol = F_RTOL * s1 * s1;

        let dphi: Vec<f64> = sigma.iter().enumerate().map(|(i, &s)| phi.first(i, s)).collect();
        let d2phi: Vec<f64> = sigma.iter().enumerate().map(|(i, &s)| phi.second(i, s)).collect();
        let sigma_pinv: Vec<f64> = sigma
            .iter()
            .map(|&s| if s > pinv_tol && s > 0.0 { 1.0 / s } else { 0.0 })
            .collect();
        let ratio: Vec<f64> = (0..m)
            .map(|i| {
                if sigma_pinv[i] > 0.0 {
                    dphi[i] * sigma_pinv[i]
                } else if dphi[i] == 0.0 {
                    // phi'(0) = 0, so phi'(s)/s tends to phi''(0).
                    d2phi[i]
                } else {
                    0.0
                }
            })
            .collect();

        let mut f_matrix = Matrix::zeros(m, m);
        let mut f_degenerate = false;
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let den = sigma[j] * sigma[j] - sigma[i] * sigma[i];
                if den.abs() <= f_tol {
                    // Pairs that are both numerically zero are expected at
                    // exact low-rank points and are not worth flagging.
                    if sigma[i].max(sigma[j]) > pinv_tol {
                        f_degenerate = true;
                    }
                } else {
                    f_matrix[(i, j)] = 1.0 / den;
                }
            }
        }

        let value = objective_from_spectrum(sigma, phi);
        let egrad = gradient_from_factors(&factors, &dphi, flat);
        let rgrad = proj_tangent(q, &egrad);
        let objective_degenerate = phi.is_degenerate(sigma);
        Ok(HessianWorkspace {
            q: q.clone(),
            flat,
            phi,
            factors,
            f_matrix,
            sigma_pinv,
            dphi,
            d2phi,
            ratio,
            value,
            egrad,
            rgrad,
            objective_degenerate,
            f_degenerate,
        })
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn objective(&self) -> f64 {
        self.value
    }

    pub fn euclidean_gradient(&self) -> &Matrix {
        &self.egrad
    }

    pub fn riemannian_gradient(&self) -> &TangentVector {
        &self.rgrad
    }

    pub fn phi(&self) -> &F {
        self.phi
    }

    /// `A(E X)`.
    fn unfold_direction(&self, e: &Matrix) -> Matrix {
        apply_a_unchecked(&(e * self.flat.matrix()), self.flat.dims())
    }

    /// Finishes a Hessian-vector product from the differential of the
    /// Euclidean gradient, `D nabla f(Q)[E]`.
    fn project_differential(&self, e: &Matrix, d_egrad: &Matrix) -> TangentVector {
        let q = &self.q;
        let egrad_t = self.egrad.transpose();
        let d_qgq = e * &egrad_t * q + q * d_egrad.transpose() * q + q * &egrad_t * e;
        let d_rgrad = (d_egrad - d_qgq) * 0.5;
        proj_tangent(q, &d_rgrad)
    }

    /// Riemannian Hessian applied to a tangent vector.
    ///
    /// The `F`-weighted SVD differentials are combined with `phi'` before
    /// evaluation: off the diagonal the core block becomes
    /// `(a_ij + b_ij)/2 K_ij + (a_ij - b_ij)/2 K_ji` with
    /// `a_ij = (phi'_i - phi'_j)/(sigma_i - sigma_j)` and
    /// `b_ij = (phi'_i + phi'_j)/(sigma_i + sigma_j)`, which is the same
    /// expression with the `1/(sigma_j^2 - sigma_i^2)` factor cancelled. The
    /// divided differences have finite limits at repeated singular values,
    /// so this stays accurate in degenerate blocks such as the zero tail at
    /// an exact low-rank point.
    pub fn hess_vec(&self, e: &TangentVector) -> TangentVector {
        let e = &e.e;
        let SvdFactors { u, sigma, v } = &self.factors;
        let m = sigma.len();
        let s1 = sigma.first().copied().unwrap_or(0.0);
        let dd_tol = DIVIDED_DIFF_RTOL * s1;
        let sum_tol = PINV_RTOL * s1;

        let dy = self.unfold_direction(e);
        let dy_v = &dy * v;
        let ut_dy = u.transpose() * &dy;
        let k = &ut_dy * v;

        let mut core = Matrix::zeros(m, m);
        for j in 0..m {
            for i in 0..m {
                if i == j {
                    core[(i, i)] = self.d2phi[i] * k[(i, i)];
                    continue;
                }
                let (si, sj) = (sigma[i], sigma[j]);
                let (pi, pj) = (self.dphi[i], self.dphi[j]);
                let a = if (si - sj).abs() > dd_tol {
                    (pi - pj) / (si - sj)
                } else {
                    0.5 * (self.d2phi[i] + self.d2phi[j])
                };
                let b = if si + sj > sum_tol {
                    (pi + pj) / (si + sj)
                } else {
                    0.5 * (self.ratio[i] + self.ratio[j])
                };
                core[(i, j)] = 0.5 * (a + b) * k[(i, j)] + 0.5 * (a - b) * k[(j, i)];
            }
        }

        let mut dg = u * core * v.transpose();
        if u.nrows() > m {
            // (I - U U^T) A(EX) V diag(phi'/sigma) V^T
            let resid = dy_v - u * &k;
            dg += scale_columns(&resid, &self.ratio) * v.transpose();
        }
        if v.nrows() > m {
            // U diag(phi'/sigma) U^T A(EX) (I - V V^T)
            let resid = ut_dy - &k * v.transpose();
            dg += u * scale_rows(&resid, &self.ratio);
        }

        let d_egrad = apply_a_inv_unchecked(&dg, self.flat.dims()) * self.flat.matrix().transpose();
        self.project_differential(e, &d_egrad)
    }

    /// Hessian-vector product evaluated term by term with the `F` matrix:
    /// SVD differentials `DU`, `D phi'(Sigma)`, `DV`, then the product rule,
    /// then projection. Near-degenerate `F` entries are zero and tiny
    /// singular values use the thresholded pseudo-inverse. Agrees with
    /// [`Self::hess_vec`] whenever the spectrum is simple and nonzero.
    pub fn hess_vec_f_matrix(&self, e: &TangentVector) -> TangentVector {
        let e = &e.e;
        let SvdFactors { u, sigma, v } = &self.factors;
        let m = sigma.len();
        let f = &self.f_matrix;

        let dy = self.unfold_direction(e);
        let dy_v = &dy * v;
        let dyt_u = dy.transpose() * u;
        let k = u.transpose() * &dy_v;

        let mut inner_u = Matrix::zeros(m, m);
        let mut inner_v = Matrix::zeros(m, m);
        for j in 0..m {
            for i in 0..m {
                inner_u[(i, j)] = f[(i, j)] * (k[(i, j)] * sigma[j] + sigma[i] * k[(j, i)]);
                inner_v[(i, j)] = f[(i, j)] * (sigma[i] * k[(i, j)] + k[(j, i)] * sigma[j]);
            }
        }
        let mut du = u * inner_u;
        if u.nrows() > m {
            du += scale_columns(&(dy_v - u * &k), &self.sigma_pinv);
        }
        let mut dv = v * inner_v;
        if v.nrows() > m {
            dv += scale_columns(&(dyt_u - v * k.transpose()), &self.sigma_pinv);
        }
        let d_dphi: Vec<f64> = (0..m).map(|i| self.d2phi[i] * k[(i, i)]).collect();

        let dg = scale_columns(&du, &self.dphi) * v.transpose()
            + scale_columns(u, &d_dphi) * v.transpose()
            + scale_columns(u, &self.dphi) * dv.transpose();
        let d_egrad = apply_a_inv_unchecked(&dg, self.flat.dims()) * self.flat.matrix().transpose();
        self.project_differential(e, &d_egrad)
    }
}

/// One-shot Hessian-vector product. Build a [`HessianWorkspace`] instead when
/// applying the Hessian repeatedly at the same point.
pub fn hess_vec<F: SpectralFunction + ?Sized>(
    q: &Matrix,
    flat: &Flattened,
    phi: &F,
    e: &TangentVector,
) -> Result<TangentVector> {
    Ok(HessianWorkspace::new(q, flat, phi)?.hess_vec(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{gen_random, random_orthogonal, Rng};
    use crate::linalg::polar_retraction;
    use crate::objective::{objective_f, ObjectivePhi};
    use crate::tensor::Dims;

    struct SquaredNorm;

    impl SpectralFunction for SquaredNorm {
        fn value(&self, _: usize, t: f64) -> f64 {
            t * t
        }
        fn first(&self, _: usize, t: f64) -> f64 {
            2.0 * t
        }
        fn second(&self, _: usize, _: f64) -> f64 {
            2.0
        }
    }

    fn setup(dims: (usize, usize, usize, usize), seed: u64) -> (Flattened, Matrix, Rng) {
        let dims = Dims::new(dims.0, dims.1, dims.2, dims.3).unwrap();
        let t = gen_random(dims, seed);
        let mut rng = Rng::new(seed ^ 0xABCD);
        let q = random_orthogonal(dims.n(), &mut rng);
        (Flattened::from_tensor(&t), q, rng)
    }

    fn random_tangent(q: &Matrix, rng: &mut Rng) -> TangentVector {
        let n = q.nrows();
        let z = Matrix::from_fn(n, n, |_, _| rng.gaussian());
        let t = proj_tangent(q, &z);
        let norm = t.norm();
        TangentVector::from_matrix_unchecked(t.into_matrix() / norm)
    }

    #[test]
    fn disentangler_validation() {
        assert!(Disentangler::new(Matrix::identity(3, 3)).is_ok());
        assert!(Disentangler::new(Matrix::identity(3, 3) * 1.01).is_err());
        assert!(Disentangler::new(Matrix::zeros(2, 3)).is_err());
        let drifted = Matrix::identity(3, 3) * (1.0 + 1e-9);
        let d = Disentangler::reorthonormalized(drifted).unwrap();
        assert!(d.orthogonality_residual() <= 1e-14);
    }

    #[test]
    fn projection_cases() {
        let (_, q, mut rng) = setup((2, 2, 2, 2), 1);
        assert!(proj_tangent(&q, &q).norm() <= 1e-14);

        let a = Matrix::from_fn(4, 4, |_, _| rng.gaussian());
        let omega = &a - a.transpose();
        let qo = &q * &omega;
        assert!((proj_tangent(&q, &qo).into_matrix() - &qo).norm() <= 1e-14);

        let sym = &a + a.transpose();
        assert!(proj_tangent(&Matrix::identity(4, 4), &sym).norm() <= 1e-15);

        let once = proj_tangent(&q, &a);
        assert!(once.is_tangent_at(&q));
        let twice = proj_tangent(&q, once.matrix());
        assert!((twice.into_matrix() - once.matrix()).norm() <= 1e-14);
    }

    #[test]
    fn transport_cases() {
        let (_, q, mut rng) = setup((2, 3, 2, 2), 2);
        let e = random_tangent(&q, &mut rng);
        assert!((transport(&q, &q, &e).into_matrix() - e.matrix()).norm() <= 1e-14);
        let to = random_orthogonal(6, &mut rng);
        let moved = transport(&q, &to, &e);
        assert!(moved.is_tangent_at(&to));
        assert!(moved.norm() <= e.norm() * (1.0 + 1e-14));
    }

    #[test]
    fn squared_norm_objective_has_zero_riemannian_gradient() {
        let (flat, q, _) = setup((3, 2, 2, 3), 3);
        let g = riemannian_gradient(&q, &flat, &SquaredNorm).unwrap();
        assert!(g.norm() <= 1e-12 * flat.norm().powi(2));
    }

    #[test]
    fn zero_tensor_gives_zero_gradient() {
        let dims = Dims::new(2, 2, 2, 2).unwrap();
        let flat = Flattened::from_matrix(Matrix::zeros(4, 4), dims).unwrap();
        let g = euclidean_gradient(&Matrix::identity(4, 4), &flat, &ObjectivePhi::VonNeumann)
            .unwrap();
        assert_eq!(g.matrix, Matrix::zeros(4, 4));
    }

    #[test]
    fn euclidean_gradient_matches_exponential_finite_differences() {
        let (flat, q, mut rng) = setup((4, 4, 4, 4), 4);
        let phi = ObjectivePhi::VonNeumann;
        let g = euclidean_gradient(&q, &flat, &phi).unwrap();
        let eps = 1e-5;
        for _ in 0..5 {
            let a = Matrix::from_fn(16, 16, |_, _| rng.gaussian());
            let omega = (&a - a.transpose()) * 0.5;
            let plus = linalg::expm(&(&omega * eps)) * &q;
            let minus = linalg::expm(&(&omega * -eps)) * &q;
            let fd = (objective_f(&plus, &flat, &phi).unwrap()
                - objective_f(&minus, &flat, &phi).unwrap())
                / (2.0 * eps);
            let analytic = g.matrix.dot(&(&omega * &q));
            let rel = (fd - analytic).abs() / analytic.abs();
            assert!(rel <= 1e-6, "relative error {rel:e}");
        }
    }

    #[test]
    fn hessian_linearity_and_tangency() {
        let (flat, q, mut rng) = setup((3, 3, 3, 3), 5);
        let phi = ObjectivePhi::VonNeumann;
        let ws = HessianWorkspace::new(&q, &flat, &phi).unwrap();
        let e1 = random_tangent(&q, &mut rng);
        let e2 = random_tangent(&q, &mut rng);
        let (a, b) = (0.7, -1.9);
        let combo = TangentVector::from_matrix_unchecked(e1.matrix() * a + e2.matrix() * b);
        let lhs = ws.hess_vec(&combo).into_matrix();
        let h1 = ws.hess_vec(&e1);
        let h2 = ws.hess_vec(&e2);
        assert!(h1.is_tangent_at(&q));
        let rhs = h1.matrix() * a + h2.matrix() * b;
        assert!((&lhs - &rhs).norm() <= 1e-10 * rhs.norm());
        assert_eq!(ws.hess_vec(&TangentVector::zeros(9)).norm(), 0.0);
    }

    #[test]
    fn both_hessian_routes_agree_on_generic_spectra() {
        for dims in [(3, 3, 3, 3), (2, 3, 4, 2), (3, 2, 2, 4)] {
            let (flat, q, mut rng) = setup(dims, 6);
            for phi in [
                ObjectivePhi::VonNeumann,
                ObjectivePhi::Renyi(0.5),
                ObjectivePhi::TruncationRank(3),
            ] {
                let ws = HessianWorkspace::new(&q, &flat, &phi).unwrap();
                let e = random_tangent(&q, &mut rng);
                let a = ws.hess_vec(&e).into_matrix();
                let b = ws.hess_vec_f_matrix(&e).into_matrix();
                let rel = (&a - &b).norm() / a.norm();
                assert!(rel <= 1e-9, "{dims:?} {phi:?}: {rel:e}");
            }
        }
    }

    #[test]
    fn hessian_quadratic_form_matches_second_differences() {
        let (flat, q, mut rng) = setup((3, 3, 3, 3), 7);
        for phi in [ObjectivePhi::VonNeumann, ObjectivePhi::Renyi(0.5)] {
            let ws = HessianWorkspace::new(&q, &flat, &phi).unwrap();
            let e = random_tangent(&q, &mut rng);
            let quad = ws.hess_vec(&e).inner(&e);
            let h = 1e-4;
            let f = |t: f64| {
                let p = polar_retraction(&q, &(e.matrix() * t)).unwrap();
                objective_f(&p, &flat, &phi).unwrap()
            };
            let fd = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
            assert!((fd - quad).abs() <= 1e-4 * quad.abs().max(1e-3), "{fd} vs {quad}");
        }
    }
}
