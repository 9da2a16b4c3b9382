//! Synthetic rule benchmark. Each task is solved when the skill names its
//! rule token and fails outright when the skill carries a penalty phrase the
//! task is sensitive to. Everything is a pure function of the seed, so whole
//! training runs can be checked without a live model.

mod harness;
mod oracle;
mod target;

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dataset::{seeded_shuffle, Task};
use crate::skilldoc::SkillDocument;

pub use harness::{CallRecord, SimBenchHarness};
pub use oracle::{OracleBehavior, OracleOptimizer};
pub use target::SimTargetBackend;

pub const SOLVED: &str = "solved";
pub const FAILED: &str = "failed";
const TOKEN_LEN: usize = 12;
const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[derive(Debug, Error)]
pub enum SimBenchError {
    #[error("invalid simbench parameters: {0}")]
    Params(String),
    #[error("task {task_id} is not a simbench task: {reason}")]
    NotARuleTask { task_id: String, reason: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad rules file: {0}")]
    Rules(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTask {
    pub task_id: String,
    pub required_token: String,
    pub distractor_penalty_tokens: Vec<String>,
    pub base_solvable: bool,
}

impl RuleTask {
    pub fn from_task(task: &Task) -> Result<Self, SimBenchError> {
        let bad = |reason: &str| SimBenchError::NotARuleTask {
            task_id: task.task_id.clone(),
            reason: reason.to_owned(),
        };
        let p = &task.payload;
        let required_token = p
            .get("required_token")
            .and_then(|v| v.as_str())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad("missing required_token"))?
            .to_owned();
        let distractor_penalty_tokens = match p.get("distractor_penalty_tokens") {
            None => Vec::new(),
            Some(v) => serde_json::from_value(v.clone()).map_err(|_| bad("penalty tokens must be strings"))?,
        };
        let base_solvable = p
            .get("base_solvable")
            .and_then(|v| v.as_bool())
            .ok_or_else(|| bad("missing base_solvable"))?;
        Ok(Self { task_id: task.task_id.clone(), required_token, distractor_penalty_tokens, base_solvable })
    }

    pub fn to_task(&self) -> Task {
        Task {
            task_id: self.task_id.clone(),
            payload: json!({
                "prompt": format!(
                    "Task {}: report the final status of this job. It is governed by rule {}.",
                    self.task_id, self.required_token
                ),
                "required_token": self.required_token,
                "distractor_penalty_tokens": self.distractor_penalty_tokens,
                "base_solvable": self.base_solvable,
            }),
            reference: json!(SOLVED),
        }
    }

    /// Score against arbitrary context text (a skill, or a whole system prompt).
    pub fn score_text(&self, text: &str) -> f64 {
        if self.penalty_in(text).is_some() {
            0.0
        } else if self.base_solvable || text.contains(&self.required_token) {
            1.0
        } else {
            0.0
        }
    }

    fn penalty_in(&self, text: &str) -> Option<&str> {
        self.distractor_penalty_tokens
            .iter()
            .find(|p| text.contains(p.as_str()))
            .map(String::as_str)
    }

    pub fn trace(&self, text: &str) -> String {
        let outcome = if self.score_text(text) == 1.0 { SOLVED } else { FAILED };
        format!(
            "task {}\nrequired rule: {}\nskill mentions rule: {}\nbase solvable: {}\npenalty phrase present: {}\noutcome: {outcome}",
            self.task_id,
            self.required_token,
            if text.contains(&self.required_token) { "yes" } else { "no" },
            self.base_solvable,
            self.penalty_in(text).unwrap_or("none"),
        )
    }
}

pub fn sim_score(task: &RuleTask, skill: &SkillDocument) -> f64 {
    task.score_text(skill.serialize())
}

/// One rule: the token that unlocks its tasks and the phrase that breaks them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimRule {
    pub token: String,
    pub penalty_token: String,
}

impl SimRule {
    pub fn helpful_line(&self) -> String {
        format!("- When a task is governed by rule {}, apply rule {} before reporting.", self.token, self.token)
    }

    pub fn harmful_line(&self) -> String {
        format!("- To save time, use shortcut {} and skip checks.", self.penalty_token)
    }
}

/// Sidecar `rules.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesFile {
    pub seed: u64,
    pub tasks: usize,
    pub base_rate: f64,
    pub rules: Vec<SimRule>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub rules: RulesFile,
    pub tasks: Vec<RuleTask>,
}

fn random_token(rng: &mut ChaCha8Rng) -> String {
    (0..TOKEN_LEN)
        .map(|_| ALPHABET[(rng.next_u32() as usize) % ALPHABET.len()] as char)
        .collect()
}

/// Task `i` follows rule `i mod n_rules`; exactly `round(n * base_rate)`
/// tasks, chosen by a seeded permutation, are solvable without any skill.
pub fn generate(n: usize, n_rules: usize, base_rate: f64, seed: u64) -> Result<SimDataset, SimBenchError> {
    if n == 0 || n_rules == 0 {
        return Err(SimBenchError::Params("tasks and rules must be positive".into()));
    }
    if !(0.0..=1.0).contains(&base_rate) {
        return Err(SimBenchError::Params(format!("base rate {base_rate} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let t = random_token(rng);
        if seen.insert(t.clone()) {
            return t;
        }
    };
    let rules: Vec<SimRule> = (0..n_rules)
        .map(|_| SimRule { token: fresh(&mut rng), penalty_token: fresh(&mut rng) })
        .collect();

    let n_base = (n as f64 * base_rate).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    seeded_shuffle(&mut order, seed.wrapping_add(1));
    let mut base = vec![false; n];
    for &i in &order[..n_base] {
        base[i] = true;
    }
    let width = n.to_string().len().max(4);
    let tasks = (0..n)
        .map(|i| {
            let rule = &rules[i % n_rules];
            RuleTask {
                task_id: format!("sim-{i:0width$}"),
                required_token: rule.token.clone(),
                distractor_penalty_tokens: vec![rule.penalty_token.clone()],
                base_solvable: base[i],
            }
        })
        .collect();
    Ok(SimDataset { rules: RulesFile { seed, tasks: n, base_rate, rules }, tasks })
}

impl SimDataset {
    pub fn to_tasks(&self) -> Vec<Task> {
        self.tasks.iter().map(RuleTask::to_task).collect()
    }

    /// Writes the JSONL dataset and `rules.json` next to it.
    pub fn write(&self, out: &Path) -> Result<(), SimBenchError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| SimBenchError::Io { path, source }
        };
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io(dir))?;
        }
        std::fs::write(out, crate::dataset::to_jsonl(&self.to_tasks())).map_err(io(out))?;
        let rules = rules_path(out);
        let text = serde_json::to_string_pretty(&self.rules)?;
        std::fs::write(&rules, text).map_err(io(&rules))?;
        Ok(())
    }

    /// Full skill carrying every rule line.
    pub fn saturating_skill(&self) -> SkillDocument {
        let body: Vec<String> = self.rules.rules.iter().map(SimRule::helpful_line).collect();
        SkillDocument::from_body(&body.join("\n")).expect("rule lines contain no markers")
    }
}

/// `rules.json` in the same directory as the dataset.
pub fn rules_path(dataset: &Path) -> std::path::PathBuf {
    dataset.with_file_name("rules.json")
}

pub fn load_rules(path: &Path) -> Result<RulesFile, SimBenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| SimBenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Rebuilds the rule tasks from a loaded dataset.
pub fn rule_tasks(tasks: &[Task]) -> Result<Vec<RuleTask>, SimBenchError> {
    tasks.iter().map(RuleTask::from_task).collect()
}
