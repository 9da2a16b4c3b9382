//! Edit-budget schedules: how many skill edits a step may apply.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("step {step} out of range for a schedule of {total_steps} steps")]
    StepOutOfRange { step: usize, total_steps: usize },
    #[error("invalid schedule: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Linear,
    Cosine,
    Autonomous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub initial_budget: usize,
    pub floor: usize,
    pub total_steps: usize,
    pub autonomous_max: usize,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.floor == 0 {
            return Err(ScheduleError::Invalid("floor must be at least 1"));
        }
        if self.floor > self.initial_budget {
            return Err(ScheduleError::Invalid("floor exceeds initial budget"));
        }
        if self.total_steps == 0 {
            return Err(ScheduleError::Invalid("total_steps must be at least 1"));
        }
        if self.autonomous_max == 0 {
            return Err(ScheduleError::Invalid("autonomous_max must be at least 1"));
        }
        Ok(())
    }

    pub fn budget_at(&self, step: usize) -> Result<usize, ScheduleError> {
        budget_at(self, step)
    }
}

fn round_half_up(x: f64) -> usize {
    // epsilon absorbs float noise on exact .5 boundaries, e.g. cos(2pi/3)
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Budget `L_t` for zero-based `step`.
pub fn budget_at(spec: &ScheduleSpec, step: usize) -> Result<usize, ScheduleError> {
    spec.validate()?;
    if spec.kind == ScheduleKind::Autonomous {
        return Ok(spec.autonomous_max);
    }
    if step >= spec.total_steps {
        return Err(ScheduleError::StepOutOfRange {
            step,
            total_steps: spec.total_steps,
        });
    }
    let l0 = spec.initial_budget;
    let floor = spec.floor;
    if spec.total_steps == 1 {
        return Ok(l0);
    }
    let span = (l0 - floor) as f64;
    let progress = step as f64 / (spec.total_steps - 1) as f64;
    let budget = match spec.kind {
        ScheduleKind::Constant => l0,
        ScheduleKind::Linear => round_half_up(l0 as f64 - span * progress),
        ScheduleKind::Cosine => {
            floor + round_half_up(span * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0)
        }
        ScheduleKind::Autonomous => unreachable!(),
    };
    Ok(budget.clamp(floor, l0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(kind: ScheduleKind, l0: usize, floor: usize, t: usize) -> ScheduleSpec {
        ScheduleSpec {
            kind,
            initial_budget: l0,
            floor,
            total_steps: t,
            autonomous_max: 6,
        }
    }

    #[test]
    fn constant_is_flat() {
        let s = spec(ScheduleKind::Constant, 4, 2, 7);
        assert!((0..7).all(|t| budget_at(&s, t).unwrap() == 4));
    }

    #[test]
    fn cosine_table() {
        let s = spec(ScheduleKind::Cosine, 4, 2, 5);
        // 2 + round(2 * (1 + cos(pi * t / 4)) / 2) by hand: 4, 3.707->4, 3, 2.29->2, 2
        let got: Vec<_> = (0..5).map(|t| budget_at(&s, t).unwrap()).collect();
        assert_eq!(got, vec![4, 4, 3, 2, 2]);
    }

    #[test]
    fn linear_example() {
        // 8 - 6 * 1/3 = 6
        assert_eq!(budget_at(&spec(ScheduleKind::Linear, 8, 2, 4), 1).unwrap(), 6);
        assert_eq!(budget_at(&spec(ScheduleKind::Linear, 8, 2, 4), 3).unwrap(), 2);
    }

    #[test]
    fn single_step_returns_initial() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            assert_eq!(budget_at(&spec(kind, 5, 1, 1), 0).unwrap(), 5);
        }
    }

    #[test]
    fn autonomous_returns_cap() {
        assert_eq!(budget_at(&spec(ScheduleKind::Autonomous, 4, 2, 3), 99).unwrap(), 6);
    }

    #[test]
    fn out_of_range_and_invalid() {
        let s = spec(ScheduleKind::Cosine, 4, 2, 5);
        assert_eq!(
            budget_at(&s, 5),
            Err(ScheduleError::StepOutOfRange { step: 5, total_steps: 5 })
        );
        assert!(budget_at(&spec(ScheduleKind::Cosine, 2, 3, 5), 0).is_err());
        assert!(budget_at(&spec(ScheduleKind::Cosine, 2, 0, 5), 0).is_err());
    }

    proptest! {
        #[test]
        fn bounded_monotone_with_endpoints(
            l0 in 1usize..40, floor_frac in 0.0f64..1.0, t in 1usize..60,
            kind in prop_oneof![Just(ScheduleKind::Constant), Just(ScheduleKind::Linear), Just(ScheduleKind::Cosine)],
        ) {
            let floor = 1 + ((l0 - 1) as f64 * floor_frac) as usize;
            let s = spec(kind, l0, floor, t);
            let budgets: Vec<_> = (0..t).map(|i| budget_at(&s, i).unwrap()).collect();
            prop_assert!(budgets.iter().all(|&b| floor <= b && b <= l0));
            prop_assert!(budgets.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(budgets[0], l0);
            if t >= 2 && kind != ScheduleKind::Constant {
                prop_assert_eq!(budgets[t - 1], floor);
            }
        }
    }
}
