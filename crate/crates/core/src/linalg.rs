//! Dense decomposition kernels: SVD with a fixed sign convention, rank-k
//! truncation, the orthogonal polar factor, the exponential of a
//! skew-symmetric matrix, and the QR and polar retractions onto O(n).

use nalgebra::linalg::{QR, SVD};

use crate::error::{Error, Result};
use crate::Matrix;

/// Thin singular value decomposition `m = U diag(sigma) V^T`.
///
/// `u` is `rows x k`, `v` is `cols x k` with `k = min(rows, cols)`, and
/// `sigma` is sorted in descending order. Each column of `u` has its
/// largest-magnitude entry positive (ties go to the lowest row index), with
/// the matching column of `v` flipped alongside.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank_count(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

fn iteration_cap(rows: usize, cols: usize) -> usize {
    // nalgebra counts implicit-shift sweeps over the whole bidiagonal.
    1000 * rows.max(cols).max(1)
}

fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

pub fn svd(m: &Matrix) -> Result<SvdFactors> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svd input".into()));
    }
    let (rows, cols) = m.shape();
    let dec = SVD::try_new(
        m.clone(),
        true,
        true,
        f64::EPSILON,
        iteration_cap(rows, cols),
    )
    .ok_or_else(|| Error::Decomposition(format!("svd of {rows}x{cols} did not converge")))?;
    let u_raw = dec.u.expect("requested U");
    let vt_raw = dec.v_t.expect("requested V^T");
    let raw_sigma: Vec<f64> = dec.singular_values.iter().copied().collect();
    let k = raw_sigma.len();

    let order = sorted_order(&raw_sigma);
    let mut u = Matrix::zeros(rows, k);
    let mut v = Matrix::zeros(cols, k);
    let mut sigma = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        sigma.push(raw_sigma[src].max(0.0));
        u.set_column(dst, &u_raw.column(src));
        v.set_column(dst, &vt_raw.row(src).transpose());
    }
    fix_signs(&mut u, &mut v);
    Ok(SvdFactors { u, sigma, v })
}

fn fix_signs(u: &mut Matrix, v: &mut Matrix) {
    for j in 0..u.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, val) in u.column(j).iter().enumerate() {
            if val.abs() > best_abs {
                best_abs = val.abs();
                best = i;
            }
        }
        if u[(best, j)] < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
}

/// Singular values only, descending.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svd input".into()));
    }
    let (rows, cols) = m.shape();
    let dec = SVD::try_new(
        m.clone(),
        false,
        false,
        f64::EPSILON,
        iteration_cap(rows, cols),
    )
    .ok_or_else(|| Error::Decomposition(format!("svd of {rows}x{cols} did not converge")))?;
    let mut s: Vec<f64> = dec.singular_values.iter().map(|v| v.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Best rank-`k` approximation `U_k diag(sigma_1..sigma_k) V_k^T`.
pub fn truncated_svd(m: &Matrix, k: usize) -> Result<Matrix> {
    let full = m.nrows().min(m.ncols());
    if k == 0 || k > full {
        return Err(Error::InvalidArgument(format!(
            "truncation rank {k} outside 1..={full}"
        )));
    }
    let f = svd(m)?;
    Ok(truncate_factors(&f, k))
}

pub(crate) fn truncate_factors(f: &SvdFactors, k: usize) -> Matrix {
    let mut uk = f.u.columns(0, k).into_owned();
    for j in 0..k {
        uk.column_mut(j).scale_mut(f.sigma[j]);
    }
    uk * f.v.columns(0, k).transpose()
}

/// Orthogonal polar factor `U V^T` of a square matrix, the maximizer of
/// `trace(Q^T m)` over orthogonal `Q`.
pub fn polar_orthogonal(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::shape(
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    let f = svd(m)?;
    Ok(&f.u * f.v.transpose())
}

/// Strictly-lower-triangular coordinates of an `n x n` skew-symmetric matrix,
/// stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewParam {
    n: usize,
    s: Vec<f64>,
}

impl SkewParam {
    pub fn new(n: usize, s: Vec<f64>) -> Result<Self> {
        let expected = n * n.saturating_sub(1) / 2;
        if s.len() != expected {
            return Err(Error::shape(
                format!("{expected} parameters for n = {n}"),
                format!("{} parameters", s.len()),
            ));
        }
        Ok(SkewParam { n, s })
    }

    pub fn zeros(n: usize) -> Self {
        SkewParam {
            n,
            s: vec![0.0; n * n.saturating_sub(1) / 2],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.s
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.s
    }

    /// Position in `s` of the lower-triangle entry `(row, col)`, `row > col`.
    pub fn index_of(n: usize, row: usize, col: usize) -> Option<usize> {
        if row <= col || row >= n {
            return None;
        }
        // Columns 0..col contribute (n-1) + (n-2) + ... entries.
        Some(col * (2 * n - col - 1) / 2 + (row - col - 1))
    }

    pub fn negated(&self) -> Self {
        SkewParam {
            n: self.n,
            s: self.s.iter().map(|v| -v).collect(),
        }
    }
}

pub fn skew_from_vector(s: &[f64], n: usize) -> Result<Matrix> {
    let p = SkewParam::new(n, s.to_vec())?;
    Ok(skew_matrix(&p))
}

pub fn skew_matrix(p: &SkewParam) -> Matrix {
    let n = p.n;
    let mut b = Matrix::zeros(n, n);
    let mut idx = 0;
    for col in 0..n {
        for row in col + 1..n {
            b[(row, col)] = p.s[idx];
            b[(col, row)] = -p.s[idx];
            idx += 1;
        }
    }
    b
}

/// Reads the strictly lower triangle of `b`. Only the lower half is used;
/// callers are expected to pass a skew-symmetric matrix.
pub fn vector_from_skew(b: &Matrix) -> Result<SkewParam> {
    if !b.is_square() {
        return Err(Error::shape(
            "square matrix",
            format!("{}x{}", b.nrows(), b.ncols()),
        ));
    }
    let n = b.nrows();
    let mut s = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for col in 0..n {
        for row in col + 1..n {
            s.push(b[(row, col)]);
        }
    }
    Ok(SkewParam { n, s })
}

/// `e^{B(s)}`, orthogonal with determinant +1.
pub fn expm_skew(p: &SkewParam) -> Matrix {
    expm(&skew_matrix(p))
}

/// Matrix exponential by scaling and squaring with a diagonal [8/8] Padé
/// approximant. For skew-symmetric input the numerator is the transpose of
/// the denominator, so each approximant is orthogonal up to rounding.
pub fn expm(a: &Matrix) -> Matrix {
    const DEGREE: usize = 8;
    let n = a.nrows();
    let norm1 = (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * 0.5f64.powi(squarings);

    let mut coeffs = [0.0; DEGREE + 1];
    coeffs[0] = 1.0;
    for j in 1..=DEGREE {
        coeffs[j] =
            coeffs[j - 1] * (DEGREE - j + 1) as f64 / (j as f64 * (2 * DEGREE - j + 1) as f64);
    }

    let mut num = Matrix::identity(n, n);
    let mut den = Matrix::identity(n, n);
    let mut power = Matrix::identity(n, n);
    for (j, c) in coeffs.iter().enumerate().skip(1) {
        power = &power * &scaled;
        num += &power * *c;
        if j % 2 == 0 {
            den += &power * *c;
        } else {
            den -= &power * *c;
        }
    }
    let mut result = den
        .lu()
        .solve(&num)
        .expect("Pade denominator is nonsingular for ||A|| <= 1/2");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// QR retraction: the orthogonal factor of `q + e`, with signs chosen so the
/// triangular factor has a positive diagonal.
pub fn qr_retraction(q: &Matrix, e: &Matrix) -> Result<Matrix> {
    if q.shape() != e.shape() || !q.is_square() {
        return Err(Error::shape(
            format!("{}x{} square", q.nrows(), q.ncols()),
            format!("{}x{}", e.nrows(), e.ncols()),
        ));
    }
    let y = q + e;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("retraction input".into()));
    }
    let scale = y.norm().max(f64::MIN_POSITIVE);
    let qr = QR::new(y);
    let r = qr.r();
    let mut out = qr.q();
    for j in 0..out.ncols() {
        let d = r[(j, j)];
        if d.abs() <= 1e-14 * scale {
            return Err(Error::Decomposition(format!(
                "q + e is numerically rank deficient (R[{j},{j}] = {d:e})"
            )));
        }
        if d < 0.0 {
            out.column_mut(j).neg_mut();
        }
    }
    Ok(out)
}

/// Polar retraction `polar(q + e)`. Second-order on O(n), which makes it the
/// right choice for finite-difference Hessian checks.
pub fn polar_retraction(q: &Matrix, e: &Matrix) -> Result<Matrix> {
    if q.shape() != e.shape() {
        return Err(Error::shape(
            format!("{}x{}", q.nrows(), q.ncols()),
            format!("{}x{}", e.nrows(), e.ncols()),
        ));
    }
    polar_orthogonal(&(q + e))
}

/// `||q^T q - I||_F`.
pub fn orthogonality_residual(q: &Matrix) -> f64 {
    let n = q.ncols();
    (q.transpose() * q - Matrix::identity(n, n)).norm()
}
