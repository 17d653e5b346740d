//! Dense 4-way tensors and the reshaping operators used to build the
//! disentangling unfolding.
//!
//! Storage is row-major with the last index fastest, so entry `X[p,q,u,v]`
//! of a tensor with dims `(l, r, b, c)` lives at `((p*r + q)*b + u)*c + v`.
//! The flattening `M` maps it to row `p*r + q`, column `u*c + v` of an
//! `lr x bc` matrix. The permuted unfolding `A` reorders the legs to
//! `(l, c | r, b)`, giving an `lc x rb` matrix with entry
//! `(p*c + v, q*b + u)`.
//!
//! All operators are explicit entry permutations, so `A^-1(A(x)) == x`
//! holds bit for bit.

use crate::error::{Error, Result};
use crate::Matrix;

/// Leg dimensions `(l, r, b, c)`. The disentangler acts on the `(l, r)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub l: usize,
    pub r: usize,
    pub b: usize,
    pub c: usize,
}

impl Dims {
    pub fn new(l: usize, r: usize, b: usize, c: usize) -> Result<Self> {
        if l == 0 || r == 0 || b == 0 || c == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive, got ({l},{r},{b},{c})"
            )));
        }
        Ok(Dims { l, r, b, c })
    }

    pub fn len(&self) -> usize {
        self.l * self.r * self.b * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Size of the disentangler, `lr`.
    pub fn n(&self) -> usize {
        self.l * self.r
    }

    /// Shape `(lr, bc)` of the flattening `M(X)`.
    pub fn flat_shape(&self) -> (usize, usize) {
        (self.l * self.r, self.b * self.c)
    }

    /// Shape `(lc, rb)` of the permuted unfolding `A(QX)`.
    pub fn unfolded_shape(&self) -> (usize, usize) {
        (self.l * self.c, self.r * self.b)
    }

    /// Number of singular values of the permuted unfolding, `min(lc, rb)`.
    pub fn m(&self) -> usize {
        let (rows, cols) = self.unfolded_shape();
        rows.min(cols)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.l, self.r, self.b, self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(
                format!("{} entries for dims {dims}", dims.len()),
                format!("{} entries", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {pos}")));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, p: usize, q: usize, u: usize, v: usize) -> usize {
        let Dims { r, b, c, .. } = self.dims;
        ((p * r + q) * b + u) * c + v
    }

    pub fn get(&self, p: usize, q: usize, u: usize, v: usize) -> f64 {
        self.data[self.offset(p, q, u, v)]
    }

    pub fn set(&mut self, p: usize, q: usize, u: usize, v: usize, value: f64) {
        let idx = self.offset(p, q, u, v);
        self.data[idx] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales the tensor to unit Frobenius norm. A zero tensor is left as is.
    pub fn normalized(mut self) -> Self {
        let norm = self.frobenius_norm();
        if norm > 0.0 {
            self.data.iter_mut().for_each(|v| *v /= norm);
        }
        self
    }
}

/// `M`: flattens `X` into the `lr x bc` matrix with entry
/// `(p*r + q, u*c + v) = X[p,q,u,v]`.
pub fn flatten_m(t: &Tensor4) -> Matrix {
    let (rows, cols) = t.dims.flat_shape();
    // Row-major storage already has exactly this layout.
    Matrix::from_row_slice(rows, cols, &t.data)
}

/// `M^-1`: inverse of [`flatten_m`].
pub fn unflatten_m_inv(m: &Matrix, dims: Dims) -> Result<Tensor4> {
    let (rows, cols) = dims.flat_shape();
    check_shape(m, rows, cols)?;
    let mut data = Vec::with_capacity(dims.len());
    for i in 0..rows {
        for j in 0..cols {
            data.push(m[(i, j)]);
        }
    }
    Tensor4::new(dims, data)
}

/// `A = M . P . M^-1`: maps an `lr x bc` matrix to the `lc x rb` unfolding
/// with entry `(p*c + v, q*b + u) = x[p*r + q, u*c + v]`.
pub fn apply_a(x: &Matrix, dims: Dims) -> Result<Matrix> {
    let (rows, cols) = dims.flat_shape();
    check_shape(x, rows, cols)?;
    Ok(apply_a_unchecked(x, dims))
}

/// `A^-1`: inverse of [`apply_a`], mapping `lc x rb` back to `lr x bc`.
pub fn apply_a_inv(y: &Matrix, dims: Dims) -> Result<Matrix> {
    let (rows, cols) = dims.unfolded_shape();
    check_shape(y, rows, cols)?;
    Ok(apply_a_inv_unchecked(y, dims))
}

pub(crate) fn apply_a_unchecked(x: &Matrix, dims: Dims) -> Matrix {
    let Dims { l, r, b, c } = dims;
    let mut out = Matrix::zeros(l * c, r * b);
    // Column-major friendly order: walk the output by columns.
    for q in 0..r {
        for u in 0..b {
            let col = q * b + u;
            for p in 0..l {
                let src_row = p * r + q;
                for v in 0..c {
                    out[(p * c + v, col)] = x[(src_row, u * c + v)];
                }
            }
        }
    }
    out
}

pub(crate) fn apply_a_inv_unchecked(y: &Matrix, dims: Dims) -> Matrix {
    let Dims { l, r, b, c } = dims;
    let mut out = Matrix::zeros(l * r, b * c);
    for u in 0..b {
        for v in 0..c {
            let col = u * c + v;
            for p in 0..l {
                for q in 0..r {
                    out[(p * r + q, col)] = y[(p * c + v, q * b + u)];
                }
            }
        }
    }
    out
}

fn check_shape(m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::shape(
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// A tensor flattened once by `M`, paired with its dims. This is the form
/// every objective and solver works on.
#[derive(Debug, Clone, PartialEq)]
pub struct Flattened {
    dims: Dims,
    x: Matrix,
}

impl Flattened {
    pub fn from_tensor(t: &Tensor4) -> Self {
        Flattened {
            dims: t.dims,
            x: flatten_m(t),
        }
    }

    pub fn from_matrix(x: Matrix, dims: Dims) -> Result<Self> {
        let (rows, cols) = dims.flat_shape();
        check_shape(&x, rows, cols)?;
        Ok(Flattened { dims, x })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn matrix(&self) -> &Matrix {
        &self.x
    }

    pub fn norm(&self) -> f64 {
        self.x.norm()
    }

    pub fn normalized(&self) -> Self {
        let norm = self.x.norm();
        if norm > 0.0 {
            Flattened {
                dims: self.dims,
                x: &self.x / norm,
            }
        } else {
            self.clone()
        }
    }

    /// `A(QX)`.
    pub fn unfold_with(&self, q: &Matrix) -> Matrix {
        apply_a_unchecked(&(q * &self.x), self.dims)
    }

    pub fn to_tensor(&self) -> Tensor4 {
        unflatten_m_inv(&self.x, self.dims).expect("shape checked at construction")
    }
}
