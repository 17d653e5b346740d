//! Disentangler optimization for 4-way tensors.
//!
//! Given `X` with legs `(l, r, b, c)`, find an orthogonal `Q` acting on the
//! `(l, r)` pair that makes the `(l, c | r, b)` unfolding of `QX` close to
//! low rank. Three optimizers are provided: Riemannian conjugate gradient,
//! Riemannian trust-region Newton, and an alternating truncated-SVD /
//! Procrustes scheme, plus chained schedules and a binary search over the
//! target rank.

pub mod error;
pub mod generate;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod objective;
pub mod rank;
pub mod solvers;
pub mod tensor;

pub type Matrix = nalgebra::DMatrix<f64>;

pub use error::{Error, Result};
pub use geometry::{Disentangler, TangentVector};
pub use objective::{ObjectivePhi, SpectralFunction};
pub use tensor::{Dims, Flattened, Tensor4};
