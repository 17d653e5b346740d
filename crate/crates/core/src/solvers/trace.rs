use std::fmt;
use std::time::Instant;

use super::Method;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: Option<f64>,
    /// `||Q_new - Q_old||_F`; zero for rejected trust-region steps.
    pub delta_q: Option<f64>,
    /// Line-search step for RCG, trust radius after the update for RTRN.
    pub step: Option<f64>,
    /// Trust-region agreement ratio.
    pub ratio: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    DeltaQ,
    ObjectiveChange,
    MaxIter,
    /// Line search or trust radius collapsed.
    Stall,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::GradientTolerance => "grad_tol",
            Termination::DeltaQ => "delta_q",
            Termination::ObjectiveChange => "obj_change",
            Termination::MaxIter => "max_iter",
            Termination::Stall => "stall",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// First trace iteration produced by each stage of a chained run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageMarker {
    pub method: Method,
    pub first_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    pub stages: Vec<StageMarker>,
    pub termination: Termination,
}

impl SolveTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }
}

/// Accumulates records with wall time measured from construction.
pub(crate) struct Recorder {
    start: Instant,
    offset_ms: f64,
    records: Vec<TraceRecord>,
}

impl Recorder {
    pub fn new() -> Self {
        Recorder {
            start: Instant::now(),
            offset_ms: 0.0,
            records: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        iter: usize,
        objective: f64,
        grad_norm: Option<f64>,
        delta_q: Option<f64>,
        step: Option<f64>,
        ratio: Option<f64>,
    ) {
        let wall_ms = self.offset_ms + self.start.elapsed().as_secs_f64() * 1e3;
        self.records.push(TraceRecord {
            iter,
            objective,
            grad_norm,
            delta_q,
            step,
            ratio,
            wall_ms,
        });
    }

    pub fn finish(self, method: Method, termination: Termination) -> super::SolveTrace {
        SolveTrace {
            records: self.records,
            stages: vec![StageMarker {
                method,
                first_iter: 0,
            }],
            termination,
        }
    }
}
