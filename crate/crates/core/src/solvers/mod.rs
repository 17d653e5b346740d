//! Disentangler optimizers.
//!
//! Every public entry point scales `x` to unit Frobenius norm first, so
//! objective values in results and traces are in normalized units. The
//! returned `Q` does not depend on the scale.

mod alternating;
mod hybrid;
mod rcg;
mod rtrn;
mod trace;

pub use alternating::alternating;
pub use hybrid::{hybrid, Stage};
pub use rcg::rcg;
pub use rtrn::rtrn;
pub use trace::{SolveTrace, StageMarker, Termination, TraceRecord};

pub(crate) use alternating::alternating_normalized;
pub(crate) use rcg::rcg_normalized;
pub(crate) use rtrn::rtrn_normalized;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{gradient_from_factors, proj_tangent, Disentangler, TangentVector};
use crate::linalg;
use crate::objective::{objective_from_spectrum, ObjectivePhi, SpectralFunction};
use crate::tensor::Flattened;
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Alternating,
    Rcg,
    Rtrn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Alternating => "alt",
            Method::Rcg => "rcg",
            Method::Rtrn => "rtrn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alt" => Ok(Method::Alternating),
            "rcg" => Ok(Method::Rcg),
            "rtrn" => Ok(Method::Rtrn),
            _ => Err(Error::InvalidArgument(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub dq_tol: f64,
    pub obj_change_tol: f64,
    pub inner_cg_max: usize,
    /// Added to the Hessian as `eta_reg * E` in the trust-region model.
    pub eta_reg: f64,
    pub delta0: f64,
    pub delta_max: f64,
    pub r_min: f64,
    pub seed: u64,
}

impl SolverOptions {
    pub fn for_method(method: Method) -> Self {
        let max_iter = match method {
            Method::Alternating => 10_000,
            Method::Rcg => 4_000,
            Method::Rtrn => 1_000,
        };
        SolverOptions {
            max_iter,
            grad_tol: 1e-8,
            dq_tol: 1e-12,
            obj_change_tol: 1e-12,
            inner_cg_max: 100,
            eta_reg: 0.0,
            delta0: 1.0,
            delta_max: 10.0,
            r_min: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("dq_tol", self.dq_tol),
            ("obj_change_tol", self.obj_change_tol),
            ("delta0", self.delta0),
            ("delta_max", self.delta_max),
            ("r_min", self.r_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.eta_reg >= 0.0 && self.eta_reg.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta_reg must be non-negative, got {}",
                self.eta_reg
            )));
        }
        if self.delta0 > self.delta_max {
            return Err(Error::InvalidArgument(format!(
                "delta0 {} exceeds delta_max {}",
                self.delta0, self.delta_max
            )));
        }
        if self.inner_cg_max == 0 {
            return Err(Error::InvalidArgument("inner_cg_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub q_star: Disentangler,
    /// Objective at `q_star` for the unit-norm input.
    pub final_objective: f64,
    pub trace: SolveTrace,
}

/// Objective and gradient at one iterate.
pub(crate) struct Point {
    pub value: f64,
    pub grad: TangentVector,
}

pub(crate) fn evaluate<F: SpectralFunction + ?Sized>(
    q: &Matrix,
    flat: &Flattened,
    phi: &F,
) -> Result<Point> {
    let factors = linalg::svd(&flat.unfold_with(q))?;
    let value = objective_from_spectrum(&factors.sigma, phi);
    if !value.is_finite() {
        return Err(Error::SolverAbort(format!("objective is {value}")));
    }
    let dphi: Vec<f64> = factors
        .sigma
        .iter()
        .enumerate()
        .map(|(i, &s)| phi.first(i, s))
        .collect();
    let grad = proj_tangent(q, &gradient_from_factors(&factors, &dphi, flat));
    Ok(Point { value, grad })
}

/// Objective only, from singular values.
pub(crate) fn objective_value<F: SpectralFunction + ?Sized>(
    q: &Matrix,
    flat: &Flattened,
    phi: &F,
) -> Result<f64> {
    let sigma = linalg::singular_values(&flat.unfold_with(q))?;
    let value = objective_from_spectrum(&sigma, phi);
    if !value.is_finite() {
        return Err(Error::SolverAbort(format!("objective is {value}")));
    }
    Ok(value)
}

pub(crate) fn check_inputs(
    flat: &Flattened,
    q0: &Disentangler,
    phi: Option<&ObjectivePhi>,
    opts: &SolverOptions,
) -> Result<()> {
    let n = flat.dims().n();
    if q0.n() != n {
        return Err(Error::shape(format!("{n}x{n} initial disentangler"), q0.n()));
    }
    if let Some(phi) = phi {
        phi.validate(flat.dims().m())?;
    }
    if flat.norm() == 0.0 {
        return Err(Error::InvalidArgument("input tensor is zero".into()));
    }
    opts.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_budgets() {
        assert_eq!(SolverOptions::for_method(Method::Alternating).max_iter, 10_000);
        assert_eq!(SolverOptions::for_method(Method::Rcg).max_iter, 4_000);
        assert_eq!(SolverOptions::for_method(Method::Rtrn).max_iter, 1_000);
        for m in [Method::Alternating, Method::Rcg, Method::Rtrn] {
            assert!(SolverOptions::for_method(m).validate().is_ok());
        }
    }

    #[test]
    fn option_validation() {
        let base = SolverOptions::for_method(Method::Rtrn);
        let mut o = base.clone();
        o.eta_reg = -1.0;
        assert!(o.validate().is_err());
        let mut o = base.clone();
        o.delta0 = 20.0;
        assert!(o.validate().is_err());
        let mut o = base.clone();
        o.grad_tol = 0.0;
        assert!(o.validate().is_err());
        let mut o = base;
        o.eta_reg = 1e-12;
        assert!(o.validate().is_ok());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Alternating, Method::Rcg, Method::Rtrn] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("newton".parse::<Method>().is_err());
    }
}
