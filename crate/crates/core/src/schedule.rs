use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Linear,
    Cosine,
    /// Linear ramp run backwards: starts at `end`, finishes at `start`.
    Annealed,
}

/// A scalar schedule over step indices `0..T`, where step 0 is the noisiest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub start: f64,
    pub end: f64,
}

impl ScheduleSpec {
    pub const fn constant(v: f64) -> Self {
        Self { kind: ScheduleKind::Constant, start: v, end: v }
    }

    pub const fn linear(start: f64, end: f64) -> Self {
        Self { kind: ScheduleKind::Linear, start, end }
    }

    pub const fn cosine(start: f64, end: f64) -> Self {
        Self { kind: ScheduleKind::Cosine, start, end }
    }

    pub const fn annealed(start: f64, end: f64) -> Self {
        Self { kind: ScheduleKind::Annealed, start, end }
    }

    pub const fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn eval(&self, step: usize, steps: usize) -> Result<f64> {
        schedule_eval(self, step, steps)
    }

    /// True when the schedule is zero at every step of a `steps` grid.
    pub fn is_zero(&self, steps: usize) -> bool {
        (0..steps).all(|s| self.eval(s, steps).map(|v| v == 0.0).unwrap_or(false))
    }

    pub fn values(&self, steps: usize) -> Vec<f64> {
        (0..steps).map(|s| self.eval(s, steps).expect("in range")).collect()
    }
}

pub fn schedule_eval(spec: &ScheduleSpec, step: usize, steps: usize) -> Result<f64> {
    if steps == 0 || step >= steps {
        return Err(Error::StepOutOfRange { step, steps });
    }
    if steps == 1 {
        return Ok(spec.start);
    }
    let frac = step as f64 / (steps - 1) as f64;
    let span = spec.end - spec.start;
    Ok(match spec.kind {
        ScheduleKind::Constant => spec.start,
        ScheduleKind::Linear => spec.start + span * frac,
        ScheduleKind::Cosine => {
            spec.start + span * (1.0 - (std::f64::consts::PI * frac).cos()) / 2.0
        }
        ScheduleKind::Annealed => spec.start + span * (1.0 - frac),
    })
}
