use serde::{Deserialize, Serialize};

use crate::backend::LedgerSnapshot;
use crate::reflect::Category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Step,
    SlowUpdate,
}

/// Outcome of submitting one candidate to the selection gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub kind: CandidateKind,
    pub candidate_hash: String,
    pub candidate_score: f64,
    pub current_score: f64,
    /// Exact rational forms of the two scores, as `n/d`.
    pub candidate_exact: String,
    pub current_exact: String,
    pub accepted: bool,
    pub became_best: bool,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// The backward pass yielded no edits; nothing was gated.
    NoProposal,
    /// The edits left the skill byte-identical; nothing was gated.
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub budget: usize,
    pub rollout_tasks: usize,
    pub rollout_mean: f64,
    pub proposals: usize,
    pub pool_size: usize,
    pub selected: usize,
    pub applied: usize,
    pub outcome: StepOutcome,
    pub decision: Option<GateDecision>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub improvement: usize,
    pub regression: usize,
    pub persistent_failure: usize,
    pub stable_success: usize,
}

impl CategoryCounts {
    pub fn from_fn(count: impl Fn(Category) -> usize) -> Self {
        Self {
            improvement: count(Category::Improvement),
            regression: count(Category::Regression),
            persistent_failure: count(Category::PersistentFailure),
            stable_success: count(Category::StableSuccess),
        }
    }
}

/// What happened at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRecord {
    pub epoch: usize,
    pub sampled_tasks: usize,
    pub comparison: Option<CategoryCounts>,
    pub slow_update: Option<GateDecision>,
    pub slow_update_note: Option<String>,
    pub meta_updated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rollout_mean: f64,
    pub score_cur: f64,
    pub score_best: f64,
    pub accepted_steps: usize,
    pub gated_steps: usize,
}

/// Exported as `run_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed_selection_score: f64,
    pub best_selection_score: f64,
    pub best_selection_exact: String,
    pub test_score: f64,
    pub test_tasks: usize,
    pub best_skill_hash: String,
    pub total_steps: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub accepted_edits: usize,
    pub initial_skill_tokens: u64,
    pub final_skill_tokens: u64,
    pub total_tokens: u64,
    pub cost_per_point: Option<f64>,
    pub steps: Vec<StepRecord>,
    pub boundaries: Vec<BoundaryRecord>,
    pub epochs: Vec<EpochRecord>,
    pub usage: LedgerSnapshot,
}

impl RunReport {
    /// All gate decisions in run order, step and slow-update alike.
    pub fn gate_decisions(&self) -> Vec<&GateDecision> {
        let mut out: Vec<(usize, usize, &GateDecision)> = Vec::new();
        for s in &self.steps {
            if let Some(d) = &s.decision {
                out.push((s.epoch, 0, d));
            }
        }
        for b in &self.boundaries {
            if let Some(d) = &b.slow_update {
                out.push((b.epoch, 1, d));
            }
        }
        out.sort_by_key(|(e, k, _)| (*e, *k));
        out.into_iter().map(|(_, _, d)| d).collect()
    }

    /// Human-readable summary used by the `report` command.
    pub fn render(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "Gate log");
        let _ = writeln!(out, "{:>5} {:>6} {:>7} {:>8} {:>10} {:>10}  {}", "step", "epoch", "budget", "applied", "candidate", "current", "decision");
        for s in &self.steps {
            let Some(d) = &s.decision else { continue };
            let verdict = match (d.accepted, d.became_best) {
                (true, true) => "accepted (new best)",
                (true, false) => "accepted",
                (false, _) => "rejected",
            };
            let cached = if d.cache_hit { " [cached]" } else { "" };
            let _ = writeln!(
                out,
                "{:>5} {:>6} {:>7} {:>8} {:>10.4} {:>10.4}  {verdict}{cached}",
                s.t, s.epoch + 1, s.budget, s.applied, d.candidate_score, d.current_score
            );
        }
        for b in &self.boundaries {
            if let Some(d) = &b.slow_update {
                let verdict = if d.accepted { "accepted" } else { "rejected" };
                let _ = writeln!(out, "slow update after epoch {}: {:.4} vs {:.4}, {verdict}", b.epoch + 1, d.candidate_score, d.current_score);
            }
        }
        let _ = writeln!(out, "\nEpoch trajectory");
        let _ = writeln!(out, "{:>5} {:>12} {:>10} {:>10} {:>9}", "epoch", "rollout", "current", "best", "accepted");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{:>5} {:>12.4} {:>10.4} {:>10.4} {:>4}/{:<4}",
                e.epoch + 1, e.rollout_mean, e.score_cur, e.score_best, e.accepted_steps, e.gated_steps
            );
        }
        let _ = writeln!(out, "\nEdit economy");
        let _ = writeln!(out, "Initial (tok): {}", self.initial_skill_tokens);
        let _ = writeln!(out, "Final (tok): {}", self.final_skill_tokens);
        let _ = writeln!(out, "Edits: {}", self.accepted_edits);
        let _ = writeln!(out, "\nScores");
        let _ = writeln!(out, "Seed selection: {:.4}", self.seed_selection_score);
        let _ = writeln!(out, "Best selection: {:.4}", self.best_selection_score);
        let _ = writeln!(out, "Test ({} tasks): {:.4}", self.test_tasks, self.test_score);
        let _ = writeln!(out, "Optimizer and target tokens: {}", self.total_tokens);
        match self.cost_per_point {
            Some(c) => {
                let _ = writeln!(out, "Cost per point: {c:.1} tokens");
            }
            None => {
                let _ = writeln!(out, "Cost per point: n/a (no selection gain)");
            }
        }
        out
    }
}
