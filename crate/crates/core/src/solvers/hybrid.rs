//! Chained solver schedules. Each stage starts from the previous stage's
//! result; the traces are joined into one with continuous iteration numbers.

use super::trace::StageMarker;
use super::{
    alternating_normalized, check_inputs, rcg_normalized, rtrn_normalized, Method, SolveResult,
    SolveTrace, SolverOptions, Termination,
};
use crate::error::{Error, Result};
use crate::geometry::Disentangler;
use crate::objective::ObjectivePhi;
use crate::tensor::Flattened;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub method: Method,
    pub max_iter: usize,
}

impl Stage {
    pub fn new(method: Method, max_iter: usize) -> Self {
        Stage { method, max_iter }
    }
}

/// Runs `schedule` in order. Alternating stages need `phi` to be a
/// truncation-rank objective. Stages with zero iterations are skipped, so
/// a schedule that reduces to a single stage reproduces that solver's trace.
pub fn hybrid(
    x: &Flattened,
    q0: &Disentangler,
    phi: &ObjectivePhi,
    schedule: &[Stage],
    opts: &SolverOptions,
) -> Result<SolveResult> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty schedule".into()));
    }
    check_inputs(x, q0, Some(phi), opts)?;
    let needs_rank = schedule.iter().any(|s| s.method == Method::Alternating);
    let k = phi.rank();
    if needs_rank && k.is_none_or(|k| k == 0) {
        return Err(Error::InvalidArgument(
            "alternating stages need a truncation rank k >= 1".into(),
        ));
    }
    let x = x.normalized();

    let mut q = q0.clone();
    let mut combined: Option<SolveTrace> = None;
    let mut final_objective = None;
    for stage in schedule.iter().filter(|s| s.max_iter > 0) {
        let mut stage_opts = opts.clone();
        stage_opts.max_iter = stage.max_iter;
        let result = match stage.method {
            Method::Alternating => {
                alternating_normalized(&x, &q, k.expect("checked above"), &stage_opts)?
            }
            Method::Rcg => rcg_normalized(&x, &q, phi, &stage_opts)?,
            Method::Rtrn => rtrn_normalized(&x, &q, phi, &stage_opts)?,
        };
        q = result.q_star;
        final_objective = Some(result.final_objective);
        combined = Some(match combined {
            None => result.trace,
            Some(mut acc) => {
                let offset = acc.iterations();
                let wall_offset = acc.records.last().map_or(0.0, |r| r.wall_ms);
                acc.stages.push(StageMarker {
                    method: stage.method,
                    first_iter: offset + 1,
                });
                // The stage's starting record duplicates the previous end point.
                acc.records
                    .extend(result.trace.records.into_iter().skip(1).map(|mut r| {
                        r.iter += offset;
                        r.wall_ms += wall_offset;
                        r
                    }));
                acc.termination = result.trace.termination;
                acc
            }
        });
    }

    match (combined, final_objective) {
        (Some(trace), Some(final_objective)) => Ok(SolveResult {
            q_star: q,
            final_objective,
            trace,
        }),
        _ => {
            // Every stage had zero iterations.
            let value = crate::solvers::objective_value(q.matrix(), &x, phi)?;
            let mut trace = SolveTrace {
                records: Vec::new(),
                stages: Vec::new(),
                termination: Termination::MaxIter,
            };
            trace.records.push(super::TraceRecord {
                iter: 0,
                objective: value,
                grad_norm: None,
                delta_q: None,
                step: None,
                ratio: None,
                wall_ms: 0.0,
            });
            Ok(SolveResult {
                q_star: q,
                final_objective: value,
                trace,
            })
        }
    }
}
