//! Alternating minimization of `||A(QX) - M||_F^2` over orthogonal `Q` and
//! rank-`k` matrices `M`. The `M` step is a truncated SVD, the `Q` step an
//! orthogonal Procrustes problem. Neither half-step can increase `c_k`.

use super::trace::Recorder;
use super::{check_inputs, Method, SolveResult, SolverOptions, Termination};
use crate::error::{Error, Result};
use crate::geometry::{gradient_from_factors, proj_tangent, Disentangler};
use crate::linalg::{self, polar_orthogonal, truncate_factors, SvdFactors};
use crate::objective::{tail_sum, ObjectivePhi, SpectralFunction};
use crate::tensor::{apply_a_inv_unchecked, Flattened};
use crate::Matrix;

pub fn alternating(
    x: &Flattened,
    q0: &Disentangler,
    k: usize,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    let m = x.dims().m();
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "truncation rank {k} outside 1..={m}"
        )));
    }
    check_inputs(x, q0, None, opts)?;
    alternating_normalized(&x.normalized(), q0, k, opts)
}

fn grad_norm(q: &Matrix, factors: &SvdFactors, x: &Flattened, k: usize) -> f64 {
    let phi = ObjectivePhi::TruncationRank(k);
    let dphi: Vec<f64> = factors
        .sigma
        .iter()
        .enumerate()
        .map(|(i, &s)| phi.first(i, s))
        .collect();
    proj_tangent(q, &gradient_from_factors(factors, &dphi, x)).norm()
}

pub(crate) fn alternating_normalized(
    x: &Flattened,
    q0: &Disentangler,
    k: usize,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    let mut rec = Recorder::new();
    let dims = x.dims();
    let mut q = q0.matrix().clone();
    let mut factors = linalg::svd(&x.unfold_with(&q))?;
    let mut ck = tail_sum(&factors.sigma, k);
    rec.push(0, ck, Some(grad_norm(&q, &factors, x, k)), None, None, None);
    let mut termination = Termination::MaxIter;

    for iter in 1..=opts.max_iter {
        let mk = truncate_factors(&factors, k);
        let target = apply_a_inv_unchecked(&mk, dims) * x.matrix().transpose();
        let q_new = polar_orthogonal(&target)?;
        let factors_new = linalg::svd(&x.unfold_with(&q_new))?;
        let ck_new = tail_sum(&factors_new.sigma, k);
        if !ck_new.is_finite() {
            return Err(Error::SolverAbort(format!("objective is {ck_new}")));
        }
        let delta_q = (&q_new - &q).norm();
        let change = (ck - ck_new).abs();
        rec.push(
            iter,
            ck_new,
            Some(grad_norm(&q_new, &factors_new, x, k)),
            Some(delta_q),
            None,
            None,
        );
        q = q_new;
        factors = factors_new;
        ck = ck_new;
        if delta_q <= opts.dq_tol {
            termination = Termination::DeltaQ;
            break;
        }
        if change <= opts.obj_change_tol {
            termination = Termination::ObjectiveChange;
            break;
        }
    }

    Ok(SolveResult {
        q_star: Disentangler::reorthonormalized(q)?,
        final_objective: ck,
        trace: rec.finish(Method::Alternating, termination),
    })
}
