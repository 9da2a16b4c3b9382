//! The training loop: rollouts, the backward pass, the strict selection gate,
//! epoch-boundary updates, persistence, and exports.

mod report;
mod state;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::backend::{approx_tokens, cost_per_point, Phase, UsageLedger};
use crate::config::{EditMode, RunConfig, RunParts};
use crate::dataset::{epoch_batches, epoch_seed, seeded_shuffle, Splits, Task};
use crate::harness::{mean_score, run_batch, Harness, Trajectory};
use crate::reflect::{buffer_digest, Comparison, RejectedStep, Reflector};
use crate::schedule::ScheduleSpec;
use crate::score::ExactScore;
use crate::skilldoc::{apply_edits, ApplyEntry, ApplyStatus, EditApplyReport, EditOp, SkillDocument};

pub use report::{
    BoundaryRecord, CandidateKind, CategoryCounts, EpochRecord, GateDecision, RunReport, StepOutcome, StepRecord,
};
pub use state::{load_latest, state_path, write_atomic, OptimizerState};

const SLOW_SAMPLE_SALT: u64 = 0x51_0E_5A_3B_1E_00_00_01;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad persisted state: {0}")]
    State(String),
    #[error("cannot resume: {0}")]
    Resume(String),
}

/// How a call to [`Trainer::run_until`] ended.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Finished(Box<RunReport>),
    /// Stopped after the requested number of steps; state is on disk.
    Paused { t: usize },
}

/// Paths of the exported artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exports {
    pub best_skill: PathBuf,
    pub splits: PathBuf,
    pub usage_ledger: PathBuf,
    pub run_report: PathBuf,
}

impl Exports {
    pub fn under(run_dir: &Path) -> Self {
        let dir = run_dir.join("exports");
        Self {
            best_skill: dir.join("best_skill.md"),
            splits: dir.join("splits.json"),
            usage_ledger: dir.join("usage_ledger.json"),
            run_report: dir.join("run_report.json"),
        }
    }
}

pub fn edit_report_path(run_dir: &Path, t: usize) -> PathBuf {
    run_dir.join("reports").join(format!("step_{t}")).join("edit_apply_report.json")
}

/// Number of optimizer steps in one epoch.
pub fn steps_per_epoch(train_len: usize, batch_size: usize, accumulation: usize) -> usize {
    if train_len == 0 {
        return 0;
    }
    let batch = batch_size.clamp(1, train_len);
    let batches = train_len.div_ceil(batch);
    batches.div_ceil(accumulation.max(1))
}

pub struct Trainer {
    config: RunConfig,
    harness: Arc<dyn Harness>,
    reflector: Reflector,
    ledger: Arc<UsageLedger>,
    splits: Splits,
    schedule: ScheduleSpec,
    steps_per_epoch: usize,
    state: OptimizerState,
}

impl Trainer {
    /// Starts a fresh run: seeds the cache with the initial skill's
    /// selection score.
    pub fn new(config: RunConfig, parts: RunParts) -> Result<Self, TrainError> {
        let RunParts { harness, reflector, ledger, splits, initial_skill } = parts;
        if splits.selection.is_empty() {
            return Err(TrainError::Config("the selection split is empty".into()));
        }
        let spe = steps_per_epoch(splits.train.len(), config.batch_size, config.accumulation);
        let schedule = config.schedule.spec(config.epochs * spe);
        schedule.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        prepare_run_dir(&config, &splits)?;
        let trajs = run_batch(harness.as_ref(), &splits.selection, &initial_skill, config.rollout_workers, Phase::GateEval);
        let seed_score = exact_mean(&trajs);
        let state = OptimizerState::new(config.digest(), initial_skill, seed_score);
        let mut trainer = Self { config, harness, reflector, ledger, splits, schedule, steps_per_epoch: spe, state };
        trainer.persist()?;
        Ok(trainer)
    }

    /// Continues from the newest persisted state in the run directory.
    pub fn resume(config: RunConfig, parts: RunParts) -> Result<Self, TrainError> {
        let Some(state) = load_latest(&config.run_dir)? else {
            return Err(TrainError::Resume(format!("no saved state under {}", config.run_dir.display())));
        };
        if state.config_digest != config.digest() {
            return Err(TrainError::Resume("the configuration differs from the one that started this run".into()));
        }
        let RunParts { harness, reflector, ledger, splits, .. } = parts;
        ledger.restore(state.ledger.clone());
        let spe = steps_per_epoch(splits.train.len(), config.batch_size, config.accumulation);
        let schedule = config.schedule.spec(config.epochs * spe);
        Ok(Self { config, harness, reflector, ledger, splits, schedule, steps_per_epoch: spe, state })
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn schedule(&self) -> &ScheduleSpec {
        &self.schedule
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    fn run_dir(&self) -> &Path {
        &self.config.run_dir
    }

    fn persist(&mut self) -> Result<(), TrainError> {
        self.state.ledger = self.ledger.snapshot();
        state::save(&self.config.run_dir, &mut self.state)
    }

    pub fn run(&mut self) -> Result<RunReport, TrainError> {
        match self.run_until(None)? {
            RunStatus::Finished(r) => Ok(*r),
            RunStatus::Paused { .. } => unreachable!("unbounded run never pauses"),
        }
    }

    /// Runs remaining epochs, stopping early after `max_steps` optimizer
    /// steps when given.
    pub fn run_until(&mut self, max_steps: Option<usize>) -> Result<RunStatus, TrainError> {
        let mut done = 0;
        while self.state.epoch < self.config.epochs {
            let epoch = self.state.epoch;
            if self.state.step_in_epoch == 0 {
                self.state.rejected_buffer.clear();
                self.state.epoch_rollout_scores.clear();
            }
            let batches = epoch_batches(&self.splits.train, self.config.batch_size.min(self.splits.train.len()), epoch_seed(self.config.split.seed, epoch));
            while self.state.step_in_epoch < self.steps_per_epoch {
                if max_steps.is_some_and(|m| done >= m) {
                    return Ok(RunStatus::Paused { t: self.state.t });
                }
                let a = self.config.accumulation;
                let k = self.state.step_in_epoch;
                let slices = &batches[(k * a).min(batches.len())..((k + 1) * a).min(batches.len())];
                self.train_step(slices)?;
                self.state.step_in_epoch += 1;
                self.state.t += 1;
                done += 1;
                self.persist()?;
            }
            self.epoch_boundary(epoch)?;
            self.state.epoch += 1;
            self.state.step_in_epoch = 0;
            self.persist()?;
        }
        Ok(RunStatus::Finished(Box::new(self.finish()?)))
    }

    fn train_step(&mut self, slices: &[Vec<Task>]) -> Result<(), TrainError> {
        let t = self.state.t;
        let budget = self.schedule.budget_at(t).map_err(|e| TrainError::Config(e.to_string()))?;
        let s_cur = self.state.s_cur.clone();
        let rollouts: Vec<Vec<Trajectory>> = slices
            .iter()
            .map(|s| run_batch(self.harness.as_ref(), s, &s_cur, self.config.rollout_workers, Phase::Rollout))
            .collect();
        let all: Vec<f64> = rollouts.iter().flatten().map(|t| t.score).collect();
        self.state.epoch_rollout_scores.extend(&all);
        let digest = buffer_digest(&self.state.rejected_buffer, self.config.buffer_cap);
        let meta = if self.config.meta_skill { self.state.meta_skill.clone() } else { String::new() };
        let outcome = self.reflector.backward(&s_cur, &rollouts, self.config.minibatch_size, budget, &digest, &meta);

        let mut record = StepRecord {
            t,
            epoch: self.state.epoch,
            step_in_epoch: self.state.step_in_epoch,
            budget,
            rollout_tasks: all.len(),
            rollout_mean: if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 },
            proposals: outcome.proposals.len(),
            pool_size: outcome.merged.len(),
            selected: outcome.selected.len(),
            applied: 0,
            outcome: StepOutcome::NoProposal,
            decision: None,
            warnings: outcome.warnings.clone(),
        };
        if outcome.selected.is_empty() {
            log::info!("step {t}: no proposal");
            self.state.steps.push(record);
            return Ok(());
        }
        let built = match self.config.edit_mode {
            EditMode::Patch => apply_edits(&s_cur, &outcome.selected, budget).map_err(|e| e.to_string()),
            EditMode::RewriteFromSuggestions => self.rewrite(&s_cur, &outcome.selected, budget),
        };
        let (candidate, report) = match built {
            Ok(x) => x,
            Err(e) => {
                record.warnings.push(format!("candidate construction failed: {e}"));
                self.state.steps.push(record);
                return Ok(());
            }
        };
        write_atomic(&edit_report_path(self.run_dir(), t), report.to_json().as_bytes())?;
        record.applied = report.applied_count();
        let applied: Vec<EditOp> = report
            .entries
            .iter()
            .filter(|e| e.status == ApplyStatus::Applied)
            .map(|e| outcome.selected[e.edit_index].clone())
            .collect();
        if candidate.hash() == s_cur.hash() {
            record.outcome = StepOutcome::Unchanged;
            self.state.steps.push(record);
            return Ok(());
        }
        let decision = self.gate(candidate.with_version(s_cur.version_id() + 1), CandidateKind::Step);
        if decision.accepted {
            record.outcome = StepOutcome::Accepted;
        } else {
            record.outcome = StepOutcome::Rejected;
            self.state.rejected_buffer.push(RejectedStep {
                edits: applied,
                score_delta: decision.candidate_score - decision.current_score,
                failure_patterns: outcome.failure_patterns.clone(),
            });
        }
        record.decision = Some(decision);
        self.state.steps.push(record);
        Ok(())
    }

    fn rewrite(&self, skill: &SkillDocument, suggestions: &[EditOp], budget: usize) -> Result<(SkillDocument, EditApplyReport), String> {
        let suggestions = &suggestions[..suggestions.len().min(budget)];
        let body = self.reflector.rewrite(skill, suggestions, budget).ok_or("rewrite produced no skill")?;
        let candidate = skill.replace_body(&body).map_err(|e| e.to_string())?;
        let entries = suggestions
            .iter()
            .enumerate()
            .map(|(i, e)| ApplyEntry {
                edit_index: i,
                op: e.op,
                status: ApplyStatus::Applied,
                detail: "folded into rewrite".into(),
            })
            .collect();
        let report = EditApplyReport { skill_hash_before: skill.hash(), skill_hash_after: candidate.hash(), entries };
        Ok((candidate, report))
    }

    /// Strict gate on the selection split, with the hash cache in front.
    pub fn gate(&mut self, candidate: SkillDocument, kind: CandidateKind) -> GateDecision {
        let hash = candidate.hash();
        let (score, cache_hit) = match self.state.cache.get(&hash) {
            Some(s) => (s.clone(), true),
            None => {
                let trajs = run_batch(self.harness.as_ref(), &self.splits.selection, &candidate, self.config.rollout_workers, Phase::GateEval);
                let s = exact_mean(&trajs);
                self.state.cache.insert(hash.clone(), s.clone());
                (s, false)
            }
        };
        let accepted = score.strictly_greater(&self.state.score_cur);
        let became_best = accepted && score.strictly_greater(&self.state.score_best);
        let decision = GateDecision {
            kind,
            candidate_hash: hash,
            candidate_score: score.to_f64(),
            current_score: self.state.score_cur.to_f64(),
            candidate_exact: score.to_string(),
            current_exact: self.state.score_cur.to_string(),
            accepted,
            became_best,
            cache_hit,
        };
        if accepted {
            self.state.s_cur = candidate.clone();
            self.state.score_cur = score.clone();
        }
        if became_best {
            self.state.s_best = candidate;
            self.state.score_best = score;
        }
        decision
    }

    fn sample_for_comparison(&self, epoch: usize) -> Vec<Task> {
        let mut tasks = self.splits.train.clone();
        seeded_shuffle(&mut tasks, epoch_seed(self.config.split.seed, epoch) ^ SLOW_SAMPLE_SALT);
        tasks.truncate(self.config.slow_update.samples);
        tasks
    }

    fn epoch_boundary(&mut self, epoch: usize) -> Result<(), TrainError> {
        let mut record = BoundaryRecord {
            epoch,
            sampled_tasks: 0,
            comparison: None,
            slow_update: None,
            slow_update_note: None,
            meta_updated: false,
        };
        let slow = self.config.slow_update.enabled && self.config.slow_update.samples > 0;
        let wants_comparison = slow || self.config.meta_skill;
        if let (Some(prev), true) = (self.state.prev_epoch_end.clone(), wants_comparison) {
            let sample = self.sample_for_comparison(epoch);
            let cur = self.state.s_cur.clone();
            let w = self.config.rollout_workers;
            let before = run_batch(self.harness.as_ref(), &sample, &prev, w, Phase::SlowUpdate);
            let after = run_batch(self.harness.as_ref(), &sample, &cur, w, Phase::SlowUpdate);
            let comparison = Comparison::from_pairs(before, after);
            record.sampled_tasks = sample.len();
            record.comparison = Some(CategoryCounts::from_fn(|c| comparison.count(c)));
            if slow {
                match self.reflector.slow_update(&prev, &cur, &comparison, cur.protected()) {
                    Some(guidance) => match cur.set_protected(&guidance) {
                        Ok(candidate) if candidate.hash() == cur.hash() => {
                            record.slow_update_note = Some("guidance unchanged".into());
                        }
                        Ok(candidate) => {
                            let candidate = candidate.with_version(cur.version_id() + 1);
                            record.slow_update = Some(self.gate(candidate, CandidateKind::SlowUpdate));
                        }
                        Err(e) => record.slow_update_note = Some(format!("guidance rejected: {e}")),
                    },
                    None => record.slow_update_note = Some("optimizer returned no guidance".into()),
                }
            }
            if self.config.meta_skill {
                if let Some(text) = self.reflector.meta_update(&prev, &cur, &comparison, &self.state.meta_skill) {
                    self.state.meta_skill = text;
                    record.meta_updated = true;
                }
            }
        }
        self.state.prev_epoch_end = Some(self.state.s_cur.clone());
        let in_epoch: Vec<&StepRecord> = self.state.steps.iter().filter(|s| s.epoch == epoch).collect();
        let scores = &self.state.epoch_rollout_scores;
        self.state.epochs.push(EpochRecord {
            epoch,
            rollout_mean: if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 },
            score_cur: self.state.score_cur.to_f64(),
            score_best: self.state.score_best.to_f64(),
            accepted_steps: in_epoch.iter().filter(|s| s.outcome == StepOutcome::Accepted).count(),
            gated_steps: in_epoch.iter().filter(|s| s.decision.is_some()).count(),
        });
        self.state.boundaries.push(record);
        Ok(())
    }

    /// Scores the best skill on the test split (the only test-split
    /// rollouts of the run) and writes the exports.
    fn finish(&mut self) -> Result<RunReport, TrainError> {
        let best = self.state.s_best.clone();
        let trajs = run_batch(self.harness.as_ref(), &self.splits.test, &best, self.config.rollout_workers, Phase::TestEval);
        let test_score = mean_score(&trajs).unwrap_or(0.0);
        let usage = self.ledger.snapshot();
        let seed = self.state.seed_score.to_f64();
        let best_score = self.state.score_best.to_f64();
        let accepted_edits = self
            .state
            .steps
            .iter()
            .filter(|s| s.outcome == StepOutcome::Accepted)
            .map(|s| s.applied)
            .sum();
        let report = RunReport {
            seed_selection_score: seed,
            best_selection_score: best_score,
            best_selection_exact: self.state.score_best.to_string(),
            test_score,
            test_tasks: trajs.len(),
            best_skill_hash: best.hash(),
            total_steps: self.state.t,
            accepted_steps: self.state.steps.iter().filter(|s| s.outcome == StepOutcome::Accepted).count(),
            rejected_steps: self.state.steps.iter().filter(|s| s.outcome == StepOutcome::Rejected).count(),
            accepted_edits,
            initial_skill_tokens: approx_tokens(self.state.s_0.serialize()),
            final_skill_tokens: approx_tokens(best.serialize()),
            total_tokens: usage.total.total(),
            cost_per_point: cost_per_point(usage.total.total(), seed, best_score).ok(),
            steps: self.state.steps.clone(),
            boundaries: self.state.boundaries.clone(),
            epochs: self.state.epochs.clone(),
            usage: usage.clone(),
        };
        let exports = Exports::under(self.run_dir());
        write_atomic(&exports.best_skill, best.to_bytes().as_slice())?;
        write_atomic(&exports.usage_ledger, pretty(&usage).as_bytes())?;
        write_atomic(&exports.run_report, pretty(&report).as_bytes())?;
        self.persist()?;
        Ok(report)
    }
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn exact_mean(trajs: &[Trajectory]) -> ExactScore {
    let scores: Vec<f64> = trajs.iter().map(|t| t.score).collect();
    ExactScore::mean(&scores).unwrap_or_else(ExactScore::zero)
}

fn prepare_run_dir(config: &RunConfig, splits: &Splits) -> Result<(), TrainError> {
    let dir = &config.run_dir;
    if dir.join("state").exists() {
        return Err(TrainError::Config(format!(
            "{} already holds a run; resume it or choose another run_dir",
            dir.display()
        )));
    }
    write_atomic(&dir.join("config.resolved.json"), config.to_json().as_bytes())?;
    let manifest = splits.manifest(&config.split);
    write_atomic(&Exports::under(dir).splits, pretty(&manifest).as_bytes())
}

/// Builds the parts from the config and runs (or resumes) to completion.
pub fn train(config: &RunConfig, resume: bool) -> Result<RunReport, TrainError> {
    let parts = RunParts::build(config).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut trainer = if resume {
        Trainer::resume(config.clone(), parts)?
    } else {
        Trainer::new(config.clone(), parts)?
    };
    trainer.run()
}
