use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::Phase;
use crate::dataset::Task;
use crate::harness::{Harness, Trajectory};
use crate::skilldoc::SkillDocument;

use super::{RuleTask, FAILED, SOLVED};

/// One harness invocation, in call order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub task_id: String,
    pub phase: Phase,
    pub skill_hash: String,
}

/// Scores tasks with [`super::sim_score`] and keeps a log of every call.
#[derive(Debug, Default)]
pub struct SimBenchHarness {
    log: Mutex<Vec<CallRecord>>,
}

impl SimBenchHarness {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("call log").len()
    }

    pub fn calls_in(&self, phase: Phase) -> usize {
        self.log.lock().expect("call log").iter().filter(|c| c.phase == phase).count()
    }
}

impl Harness for SimBenchHarness {
    fn kind(&self) -> &'static str {
        "simbench"
    }

    fn run_task(&self, task: &Task, skill: &SkillDocument, phase: Phase) -> Trajectory {
        self.log.lock().expect("call log").push(CallRecord {
            task_id: task.task_id.clone(),
            phase,
            skill_hash: skill.hash(),
        });
        match RuleTask::from_task(task) {
            Ok(rule) => {
                let text = skill.serialize();
                let score = rule.score_text(text);
                let answer = if score == 1.0 { SOLVED } else { FAILED };
                Trajectory::new(&task.task_id, rule.trace(text), answer.into(), score, 1.0)
            }
            Err(e) => Trajectory::fault(&task.task_id, e.to_string(), 1.0),
        }
    }
}
