//! Rank estimates from parameter counting, and a binary search for the
//! smallest rank `k` whose truncation error can be driven below a tolerance.

use crate::error::{Error, Result};
use crate::geometry::Disentangler;
use crate::objective::{spectrum, ObjectivePhi};
use crate::solvers::{
    alternating_normalized, check_inputs, rcg_normalized, rtrn_normalized, Method, SolverOptions,
};
use crate::tensor::{Dims, Flattened};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofEstimate {
    pub k: usize,
    /// No `k <= min(lc, rb)` balances the count; `k` is that upper bound.
    pub saturated: bool,
}

/// Smallest `k` for which the rank-`k` matrices plus the orthogonal group,
/// modulo the rotations that act trivially, have at least as many degrees
/// of freedom as the tensor:
/// `k(lc + rb) - k^2 + lr(lr-1)/2 - l(l-1)/2 - r(r-1)/2 >= lrbc`.
pub fn dof_rank_estimate(dims: Dims) -> Result<DofEstimate> {
    let Dims { l, r, b, c } = dims;
    if l * r > b * c {
        return Err(Error::UnsupportedOrientation(format!(
            "dof estimate needs lr <= bc, got lr = {} and bc = {}",
            l * r,
            b * c
        )));
    }
    let (lc, rb) = (l * c, r * b);
    let m = lc.min(rb);
    let n = l * r;
    let group = (n * (n - 1) / 2) as i128 - (l * (l - 1) / 2) as i128 - (r * (r - 1) / 2) as i128;
    let target = (l * r * b * c) as i128;
    for k in 0..=m {
        let k_ = k as i128;
        if k_ * (lc + rb) as i128 - k_ * k_ + group >= target {
            return Ok(DofEstimate { k, saturated: false });
        }
    }
    Ok(DofEstimate { k: m, saturated: true })
}

/// Closed form of the estimate for `r = l`, `b = c`, `c >= l`:
/// `ceil(lc - sqrt((l-1)^2 l (l+2) / 2))`.
pub fn k_star_lc(l: usize, c: usize) -> Result<usize> {
    if l < 2 || c < l {
        return Err(Error::InvalidArgument(format!(
            "closed-form rank needs c >= l >= 2, got l = {l}, c = {c}"
        )));
    }
    let l128 = l as u128;
    // (l-1)^2 l (l+2) is always even.
    let half = (l128 - 1) * (l128 - 1) * l128 * (l128 + 2) / 2;
    // ceil(lc - s) = lc - floor(s) for integer lc.
    Ok(l * c - half.isqrt() as usize)
}

pub fn k_star_equal(l: usize) -> Result<usize> {
    k_star_lc(l, l)
}

/// One probe of the search, logged with the interval state before the probe
/// (as tabulated) and after it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub iter: usize,
    pub k: usize,
    pub k_l: usize,
    pub k_r: usize,
    pub k_opt: usize,
    pub c_k: f64,
    pub success: bool,
    pub k_l_after: usize,
    pub k_r_after: usize,
    pub k_opt_after: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSearchState {
    pub k_l: usize,
    pub k_r: usize,
    pub k: usize,
    pub k_opt: usize,
    pub epsilon: f64,
    pub history: Vec<ProbeRecord>,
    /// The initial bracket step found no rank meeting the tolerance.
    pub initial_failed: bool,
}

/// Optimizes a rank-`k` objective starting from `start` and reports the
/// achieved truncation error with the optimized disentangler.
pub trait RankProbe {
    fn probe(&mut self, k: usize, start: &Disentangler) -> Result<(f64, Disentangler)>;
}

impl<F> RankProbe for F
where
    F: FnMut(usize, &Disentangler) -> Result<(f64, Disentangler)>,
{
    fn probe(&mut self, k: usize, start: &Disentangler) -> Result<(f64, Disentangler)> {
        self(k, start)
    }
}

#[derive(Debug, Clone)]
pub struct RankSearchOutcome {
    pub k_opt: usize,
    pub q: Disentangler,
    pub state: RankSearchState,
}

/// Upper bound on probes when the caller sets none.
pub const DEFAULT_MAX_PROBES: usize = 64;

/// Bisection over `[0, k_r_init]` with midpoint `ceil((k_l + k_r)/2)`. `q` is
/// the disentangler known to achieve rank `k_r_init`; every probe starts from
/// the best disentangler found so far.
pub fn binary_search_from<P: RankProbe + ?Sized>(
    k_r_init: usize,
    q: Disentangler,
    epsilon: f64,
    max_probes: usize,
    probe: &mut P,
) -> Result<RankSearchOutcome> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {epsilon}"
        )));
    }
    let mut state = RankSearchState {
        k_l: 0,
        k_r: k_r_init,
        k: k_r_init,
        k_opt: k_r_init,
        epsilon,
        history: Vec::new(),
        initial_failed: false,
    };
    let mut best = q;
    let mut iter = 0;
    // k_r can only drop below k_l via k_r = k - 1 with k = 0, hence the
    // explicit guard against underflow.
    let mut exhausted = false;
    while !exhausted && state.k_l <= state.k_r && iter < max_probes {
        iter += 1;
        let k = (state.k_l + state.k_r).div_ceil(2);
        state.k = k;
        let (c_k, q_k) = probe.probe(k, &best)?;
        let (k_l, k_r, k_opt) = (state.k_l, state.k_r, state.k_opt);
        let success = c_k <= epsilon;
        if success {
            state.k_opt = k;
            best = q_k;
            match k.checked_sub(1) {
                Some(v) => state.k_r = v,
                None => exhausted = true,
            }
        } else {
            state.k_l = k + 1;
        }
        state.history.push(ProbeRecord {
            iter,
            k,
            k_l,
            k_r,
            k_opt,
            c_k,
            success,
            k_l_after: state.k_l,
            k_r_after: state.k_r,
            k_opt_after: state.k_opt,
        });
    }
    Ok(RankSearchOutcome {
        k_opt: state.k_opt,
        q: best,
        state,
    })
}

/// Probe that runs one of the solvers on the rank-`k` truncation error of a
/// unit-norm tensor.
pub struct SolverProbe<'a> {
    pub x: &'a Flattened,
    pub method: Method,
    pub opts: SolverOptions,
}

impl RankProbe for SolverProbe<'_> {
    fn probe(&mut self, k: usize, start: &Disentangler) -> Result<(f64, Disentangler)> {
        if k == 0 {
            // Nothing is kept, so c_0 = ||X||^2 for every Q.
            return Ok((self.x.norm().powi(2), start.clone()));
        }
        let phi = ObjectivePhi::TruncationRank(k);
        let result = match self.method {
            Method::Alternating => alternating_normalized(self.x, start, k, &self.opts)?,
            Method::Rcg => rcg_normalized(self.x, start, &phi, &self.opts)?,
            Method::Rtrn => rtrn_normalized(self.x, start, &phi, &self.opts)?,
        };
        Ok((result.final_objective, result.q_star))
    }
}

/// Full search: RCG on the Renyi-1/2 objective brackets the rank, then
/// bisection with `method` refines it. `epsilon` is in units of the
/// unit-norm tensor.
pub fn binary_search_rank(
    x: &Flattened,
    q0: &Disentangler,
    epsilon: f64,
    method: Method,
    opts: &SolverOptions,
    max_probes: usize,
) -> Result<RankSearchOutcome> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {epsilon}"
        )));
    }
    check_inputs(x, q0, None, opts)?;
    let x = x.normalized();
    let m = x.dims().m();

    let mut pre_opts = opts.clone();
    pre_opts.grad_tol = 1e-8;
    let pre = rcg_normalized(&x, q0, &ObjectivePhi::Renyi(0.5), &pre_opts)?;
    let sp = spectrum(pre.q_star.matrix(), &x)?;
    let k_r = (0..=m).find(|&k| sp.tail(k) <= epsilon);

    let Some(k_r) = k_r else {
        let state = RankSearchState {
            k_l: 0,
            k_r: m,
            k: m,
            k_opt: m,
            epsilon,
            history: Vec::new(),
            initial_failed: true,
        };
        return Ok(RankSearchOutcome {
            k_opt: m,
            q: pre.q_star,
            state,
        });
    };

    let mut probe = SolverProbe {
        x: &x,
        method,
        opts: opts.clone(),
    };
    binary_search_from(k_r, pre.q_star, epsilon, max_probes, &mut probe)
}
