//! Riemannian conjugate gradient with Hestenes-Stiefel updates, projection
//! transport, QR retraction and Armijo backtracking.

use super::trace::Recorder;
use super::{check_inputs, evaluate, objective_value, Method, SolveResult, SolverOptions, Termination};
use crate::error::{Error, Result};
use crate::geometry::{transport, Disentangler, TangentVector};
use crate::linalg::qr_retraction;
use crate::objective::ObjectivePhi;
use crate::tensor::Flattened;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;

pub fn rcg(
    x: &Flattened,
    q0: &Disentangler,
    phi: &ObjectivePhi,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    check_inputs(x, q0, Some(phi), opts)?;
    rcg_normalized(&x.normalized(), q0, phi, opts)
}

pub(crate) fn rcg_normalized(
    x: &Flattened,
    q0: &Disentangler,
    phi: &ObjectivePhi,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    let mut rec = Recorder::new();
    let mut q = q0.matrix().clone();
    let mut point = evaluate(&q, x, phi)?;
    // All recorded values come from the same singular-value routine as the
    // line search, so comparisons across iterations and stages are exact.
    point.value = objective_value(&q, x, phi)?;
    let mut gnorm = point.grad.norm();
    rec.push(0, point.value, Some(gnorm), None, None, None);

    let mut dir = TangentVector::from_matrix_unchecked(-point.grad.matrix());
    let mut prev_step: Option<f64> = None;
    let mut termination = Termination::MaxIter;

    for iter in 1..=opts.max_iter {
        if gnorm <= opts.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let slope = point.grad.inner(&dir);
        let mut t = match prev_step {
            Some(s) => 2.0 * s,
            None => 1.0 / gnorm,
        };
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = qr_retraction(&q, &(dir.matrix() * t))?;
            let f = objective_value(&trial, x, phi)?;
            if f <= point.value + ARMIJO_C * t * slope {
                accepted = Some((trial, f));
                break;
            }
            t *= 0.5;
        }
        let Some((q_new, f_new)) = accepted else {
            termination = Termination::Stall;
            break;
        };

        let mut next = evaluate(&q_new, x, phi)?;
        // Keep the value the sufficient-decrease test saw; the full SVD can
        // differ from it in the last bit.
        next.value = f_new;
        let delta_q = (&q_new - &q).norm();
        let g_old = transport(&q, &q_new, &point.grad);
        let d_old = transport(&q, &q_new, &dir);
        let y = next.grad.matrix() - g_old.matrix();
        let denom = d_old.matrix().dot(&y);
        let beta = if denom != 0.0 {
            (next.grad.matrix().dot(&y) / denom).max(0.0)
        } else {
            0.0
        };
        let mut d_new = d_old.matrix() * beta - next.grad.matrix();
        if -d_new.dot(next.grad.matrix()) <= 0.0 {
            d_new = -next.grad.matrix();
        }
        if !d_new.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverAbort("search direction is not finite".into()));
        }

        q = q_new;
        point = next;
        gnorm = point.grad.norm();
        dir = TangentVector::from_matrix_unchecked(d_new);
        prev_step = Some(t);
        rec.push(iter, point.value, Some(gnorm), Some(delta_q), Some(t), None);
    }
    if termination == Termination::MaxIter && gnorm <= opts.grad_tol {
        termination = Termination::GradientTolerance;
    }

    Ok(SolveResult {
        q_star: Disentangler::reorthonormalized(q)?,
        final_objective: point.value,
        trace: rec.finish(Method::Rcg, termination),
    })
}
