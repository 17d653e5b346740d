//! Riemannian trust-region Newton with a Steihaug truncated-CG inner solver.
//!
//! Trial points use the polar retraction, which is second order, so the
//! quadratic model built from the Riemannian Hessian matches the pulled-back
//! objective to second order everywhere, not only at critical points.

use super::trace::Recorder;
use super::{check_inputs, objective_value, Method, SolveResult, SolverOptions, Termination};
use crate::error::{Error, Result};
use crate::geometry::{Disentangler, HessianWorkspace, TangentVector};
use crate::linalg::polar_retraction;
use crate::objective::ObjectivePhi;
use crate::tensor::Flattened;
use crate::Matrix;

/// Relative tolerance for deciding that a step lies on the trust-region
/// boundary.
const BOUNDARY_RTOL: f64 = 1e-10;

/// Radius below which progress is impossible in double precision.
const MIN_RADIUS: f64 = 1e-16;

pub fn rtrn(
    x: &Flattened,
    q0: &Disentangler,
    phi: &ObjectivePhi,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    check_inputs(x, q0, Some(phi), opts)?;
    rtrn_normalized(&x.normalized(), q0, phi, opts)
}

pub(crate) struct InnerSolution {
    pub eta: Matrix,
    /// `H eta`, including the regularization term.
    pub h_eta: Matrix,
    pub on_boundary: bool,
}

/// `tau >= 0` with `||eta + tau d|| = delta`.
fn boundary_tau(eta: &Matrix, d: &Matrix, delta: f64) -> f64 {
    let dd = d.dot(d);
    let ed = eta.dot(d);
    let ee = eta.dot(eta);
    let disc = (ed * ed + dd * (delta * delta - ee)).max(0.0);
    // Stable root of dd tau^2 + 2 ed tau + (ee - delta^2) = 0.
    if ed >= 0.0 {
        (delta * delta - ee).max(0.0) / (ed + disc.sqrt())
    } else {
        (-ed + disc.sqrt()) / dd
    }
}

/// Approximately minimizes `<g, eta> + <H eta, eta>/2` over `||eta|| <= delta`.
pub(crate) fn steihaug<H>(g: &Matrix, delta: f64, max_inner: usize, hess: H) -> InnerSolution
where
    H: Fn(&Matrix) -> Matrix,
{
    let n = g.nrows();
    let gnorm = g.norm();
    let tol = gnorm.sqrt().min(0.1) * gnorm;
    let mut eta = Matrix::zeros(n, n);
    let mut h_eta = Matrix::zeros(n, n);
    let mut r = g.clone();
    let mut d = -g;
    let mut rr = r.dot(&r);

    for _ in 0..max_inner {
        let hd = hess(&d);
        let dhd = d.dot(&hd);
        if !dhd.is_finite() {
            return cauchy_point(g, delta, &hess);
        }
        if dhd <= 0.0 {
            let tau = boundary_tau(&eta, &d, delta);
            eta += &d * tau;
            h_eta += &hd * tau;
            return InnerSolution {
                eta,
                h_eta,
                on_boundary: true,
            };
        }
        let alpha = rr / dhd;
        let eta_next = &eta + &d * alpha;
        if eta_next.norm() >= delta {
            let tau = boundary_tau(&eta, &d, delta);
            eta += &d * tau;
            h_eta += &hd * tau;
            return InnerSolution {
                eta,
                h_eta,
                on_boundary: true,
            };
        }
        eta = eta_next;
        h_eta += &hd * alpha;
        r += &hd * alpha;
        let rr_next = r.dot(&r);
        if rr_next.sqrt() <= tol {
            break;
        }
        let beta = rr_next / rr;
        d = &d * beta - &r;
        rr = rr_next;
    }
    let on_boundary = eta.norm() >= delta * (1.0 - BOUNDARY_RTOL);
    InnerSolution {
        eta,
        h_eta,
        on_boundary,
    }
}

/// Model minimizer along `-g` inside the trust region.
fn cauchy_point<H>(g: &Matrix, delta: f64, hess: &H) -> InnerSolution
where
    H: Fn(&Matrix) -> Matrix,
{
    let gnorm = g.norm();
    let hg = hess(g);
    let ghg = g.dot(&hg);
    let tau = if ghg.is_finite() && ghg > 0.0 {
        (gnorm.powi(3) / (delta * ghg)).min(1.0)
    } else {
        1.0
    };
    let scale = -tau * delta / gnorm;
    let h_eta = if ghg.is_finite() {
        hg * scale
    } else {
        Matrix::zeros(g.nrows(), g.ncols())
    };
    InnerSolution {
        eta: g * scale,
        h_eta,
        on_boundary: tau >= 1.0,
    }
}

pub(crate) fn rtrn_normalized(
    x: &Flattened,
    q0: &Disentangler,
    phi: &ObjectivePhi,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    let mut rec = Recorder::new();
    let mut q = q0.matrix().clone();
    let mut ws = HessianWorkspace::new(&q, x, phi)?;
    if !ws.objective().is_finite() {
        return Err(Error::SolverAbort(format!("objective is {}", ws.objective())));
    }
    // Same routine as the trial evaluations, so ratios compare like with like.
    let mut f = objective_value(&q, x, phi)?;
    let mut gnorm = ws.riemannian_gradient().norm();
    let mut delta = opts.delta0;
    rec.push(0, f, Some(gnorm), None, Some(delta), None);
    let mut termination = Termination::MaxIter;

    for iter in 1..=opts.max_iter {
        if gnorm <= opts.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        if delta < MIN_RADIUS {
            termination = Termination::Stall;
            break;
        }
        let g = ws.riemannian_gradient().matrix().clone();
        let inner = {
            let ws = &ws;
            let eta_reg = opts.eta_reg;
            steihaug(&g, delta, opts.inner_cg_max, move |d: &Matrix| {
                let mut hd = ws
                    .hess_vec(&TangentVector::from_matrix_unchecked(d.clone()))
                    .into_matrix();
                if eta_reg > 0.0 {
                    hd += d * eta_reg;
                }
                hd
            })
        };
        let model_decrease = g.dot(&inner.eta) + 0.5 * inner.h_eta.dot(&inner.eta);
        if !model_decrease.is_finite() {
            return Err(Error::SolverAbort(format!("model value is {model_decrease}")));
        }

        let trial = polar_retraction(&q, &inner.eta)?;
        let f_trial = objective_value(&trial, x, phi)?;
        let ratio = if model_decrease < 0.0 {
            (f_trial - f) / model_decrease
        } else {
            f64::NEG_INFINITY
        };

        if ratio < 0.25 {
            delta /= 4.0;
        } else if ratio > 0.75 && inner.on_boundary {
            delta = (2.0 * delta).min(opts.delta_max);
        }

        let delta_q = if ratio > opts.r_min {
            let dq = (&trial - &q).norm();
            q = trial;
            ws = HessianWorkspace::new(&q, x, phi)?;
            // The ratio test saw f_trial; the workspace value can differ in
            // the last bit.
            f = f_trial;
            gnorm = ws.riemannian_gradient().norm();
            dq
        } else {
            0.0
        };
        rec.push(
            iter,
            f,
            Some(gnorm),
            Some(delta_q),
            Some(delta),
            Some(ratio),
        );
    }
    if termination == Termination::MaxIter && gnorm <= opts.grad_tol {
        termination = Termination::GradientTolerance;
    }

    Ok(SolveResult {
        q_star: Disentangler::reorthonormalized(q)?,
        final_objective: f,
        trace: rec.finish(Method::Rtrn, termination),
    })
}
