//! Harness adapters: run one task under a skill and score the result.
//!
//! Every adapter implements [`Harness`]. Task failures and harness faults
//! never surface as errors; they become low-scoring trajectories whose trace
//! says what went wrong. Only misconfiguration is an error, and it is raised
//! when the adapter is built.

mod direct_chat;
mod scorer;
mod workspace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Phase;
use crate::dataset::Task;
use crate::pool;
use crate::skilldoc::SkillDocument;

pub use direct_chat::DirectChatHarness;
pub use scorer::Scorer;
pub use workspace::{WorkspaceCliHarness, WorkspaceConfig};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HarnessError {
    #[error("harness misconfigured: {0}")]
    Config(String),
}

/// One scored execution of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub trace: String,
    pub final_answer: String,
    pub score: f64,
    pub success: bool,
}

impl Trajectory {
    pub fn new(task_id: &str, trace: String, final_answer: String, score: f64, threshold: f64) -> Self {
        let score = if score.is_finite() { score.clamp(0.0, 1.0) } else { 0.0 };
        Self {
            task_id: task_id.to_owned(),
            trace,
            final_answer,
            score,
            success: score >= threshold,
        }
    }

    /// Zero-score trajectory recording a harness fault.
    pub fn fault(task_id: &str, message: impl AsRef<str>, threshold: f64) -> Self {
        Self::new(
            task_id,
            format!("harness fault: {}", message.as_ref()),
            String::new(),
            0.0,
            threshold,
        )
    }
}

pub trait Harness: Send + Sync {
    fn kind(&self) -> &'static str;

    fn run_task(&self, task: &Task, skill: &SkillDocument, phase: Phase) -> Trajectory;

    /// True when calls must not overlap (e.g. the target backend is a script).
    fn sequential(&self) -> bool {
        false
    }
}

/// Runs `tasks` with at most `max_workers` in flight; output order matches
/// input order.
pub fn run_batch(
    harness: &dyn Harness,
    tasks: &[Task],
    skill: &SkillDocument,
    max_workers: usize,
    phase: Phase,
) -> Vec<Trajectory> {
    let workers = if harness.sequential() { 1 } else { max_workers.max(1) };
    pool::map_ordered(tasks, workers, |_, task| harness.run_task(task, skill, phase))
}

pub fn mean_score(trajectories: &[Trajectory]) -> Option<f64> {
    if trajectories.is_empty() {
        return None;
    }
    Some(trajectories.iter().map(|t| t.score).sum::<f64>() / trajectories.len() as f64)
}

/// Keeps the last `cap` bytes of `text`, cut on a char boundary.
pub fn tail_truncate(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_owned();
    }
    let mut start = text.len() - cap;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    format!("[... truncated ...]{}", &text[start..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    struct Fixed;

    impl Harness for Fixed {
        fn kind(&self) -> &'static str {
            "fixed"
        }

        fn run_task(&self, task: &Task, _skill: &SkillDocument, _phase: Phase) -> Trajectory {
            let score = task.reference.as_f64().unwrap_or(0.0);
            Trajectory::new(&task.task_id, String::new(), String::new(), score, 1.0)
        }
    }

    fn task(id: &str, score: f64) -> Task {
        Task { task_id: id.into(), payload: Value::Null, reference: score.into() }
    }

    #[test]
    fn batch_mean_and_order() {
        let tasks = vec![task("a", 1.0), task("b", 0.0), task("c", 0.5)];
        let out = run_batch(&Fixed, &tasks, &SkillDocument::empty(), 2, Phase::Rollout);
        assert_eq!(out.iter().map(|t| t.task_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(mean_score(&out), Some(0.5));
        assert!(run_batch(&Fixed, &[], &SkillDocument::empty(), 2, Phase::Rollout).is_empty());
        let ones = vec![task("a", 1.0), task("b", 1.0)];
        assert_eq!(mean_score(&run_batch(&Fixed, &ones, &SkillDocument::empty(), 4, Phase::Rollout)), Some(1.0));
    }

    #[test]
    fn scores_clamped_and_thresholded() {
        let t = Trajectory::new("x", String::new(), String::new(), 1.7, 1.0);
        assert_eq!((t.score, t.success), (1.0, true));
        let t = Trajectory::new("x", String::new(), String::new(), 0.6, 0.5);
        assert!(t.success);
        let t = Trajectory::new("x", String::new(), String::new(), f64::NAN, 0.5);
        assert_eq!(t.score, 0.0);
    }

    #[test]
    fn truncation_keeps_tail() {
        assert_eq!(tail_truncate("abc", 5), "abc");
        assert_eq!(tail_truncate("abcdef", 2), "[... truncated ...]ef");
        assert!(tail_truncate("ééé", 3).ends_with('é'));
    }
}
