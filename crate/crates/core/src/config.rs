//! Run configuration: one JSON document, with defaults for every optimizer
//! hyperparameter, and the wiring from it to harnesses and backends.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{
    ChatBackend, Client, LiveBackend, LiveConfig, ReasoningEffort, ScriptedBackend, UsageLedger,
};
use crate::dataset::{self, SplitSpec, Splits, Task};
use crate::harness::{DirectChatHarness, Harness, Scorer, WorkspaceCliHarness, WorkspaceConfig};
use crate::reflect::{PromptSet, ReflectSettings, Reflector};
use crate::schedule::{ScheduleKind, ScheduleSpec};
use crate::simbench::{self, OracleBehavior, OracleOptimizer, SimBenchHarness, SimTargetBackend};
use crate::skilldoc::SkillDocument;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HarnessSpec {
    Simbench,
    DirectChat {
        #[serde(default)]
        base_prompt: String,
        #[serde(default)]
        answer_marker: Option<String>,
        #[serde(default)]
        scorer: Scorer,
    },
    WorkspaceCli {
        workspace: WorkspaceConfig,
        /// Parent of the per-task directories; defaults to `<run_dir>/workspaces`.
        #[serde(default)]
        root: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Scripted {
        script: PathBuf,
    },
    Live {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
        #[serde(default)]
        reasoning_effort: ReasoningEffort,
    },
    /// Simulated target answering simbench tasks from the dataset.
    SimTarget,
    /// Deterministic simbench optimizer; rules default to `rules.json` beside the dataset.
    SimbenchOracle {
        behavior: OracleBehavior,
        #[serde(default)]
        rules: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    Patch,
    RewriteFromSuggestions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "d_cosine")]
    pub kind: ScheduleKind,
    #[serde(default = "d_4")]
    pub initial_budget: usize,
    #[serde(default = "d_2")]
    pub floor: usize,
    #[serde(default = "d_8")]
    pub autonomous_max: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { kind: ScheduleKind::Cosine, initial_budget: 4, floor: 2, autonomous_max: 8 }
    }
}

impl ScheduleConfig {
    pub fn spec(&self, total_steps: usize) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.kind,
            initial_budget: self.initial_budget,
            floor: self.floor,
            total_steps: total_steps.max(1),
            autonomous_max: self.autonomous_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlowUpdateConfig {
    #[serde(default = "d_true")]
    pub enabled: bool,
    #[serde(default = "d_20")]
    pub samples: usize,
}

impl Default for SlowUpdateConfig {
    fn default() -> Self {
        Self { enabled: true, samples: 20 }
    }
}

fn d_cosine() -> ScheduleKind {
    ScheduleKind::Cosine
}
fn d_true() -> bool {
    true
}
fn d_1() -> usize {
    1
}
fn d_2() -> usize {
    2
}
fn d_3() -> usize {
    3
}
fn d_4() -> usize {
    4
}
fn d_8() -> usize {
    8
}
fn d_16() -> usize {
    16
}
fn d_20() -> usize {
    20
}
fn d_40() -> usize {
    40
}
fn d_4000() -> usize {
    4000
}
fn d_threshold() -> f64 {
    1.0
}
fn d_patch() -> EditMode {
    EditMode::Patch
}
fn d_run_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub split: SplitSpec,
    pub harness: HarnessSpec,
    #[serde(default)]
    pub target: Option<BackendSpec>,
    pub optimizer: BackendSpec,
    #[serde(default = "d_4")]
    pub epochs: usize,
    #[serde(default = "d_40")]
    pub batch_size: usize,
    #[serde(default = "d_1")]
    pub accumulation: usize,
    #[serde(default = "d_8")]
    pub minibatch_size: usize,
    #[serde(default = "d_16")]
    pub reflection_workers: usize,
    #[serde(default = "d_16")]
    pub rollout_workers: usize,
    #[serde(default = "d_8")]
    pub merge_batch_size: usize,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "d_patch")]
    pub edit_mode: EditMode,
    #[serde(default = "d_3")]
    pub refinement_rounds: usize,
    #[serde(default)]
    pub slow_update: SlowUpdateConfig,
    #[serde(default = "d_true")]
    pub meta_skill: bool,
    #[serde(default = "d_20")]
    pub buffer_cap: usize,
    #[serde(default = "d_threshold")]
    pub success_threshold: f64,
    #[serde(default = "d_4000")]
    pub trace_char_cap: usize,
    #[serde(default)]
    pub initial_skill: Option<PathBuf>,
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default = "d_run_dir")]
    pub run_dir: PathBuf,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// A simbench configuration with every other field at its default.
    pub fn simbench(dataset: PathBuf, behavior: OracleBehavior, run_dir: PathBuf) -> Self {
        let cfg: RunConfig = serde_json::from_value(serde_json::json!({
            "dataset": dataset,
            "harness": {"kind": "simbench"},
            "optimizer": {"kind": "simbench_oracle", "behavior": behavior},
            "run_dir": run_dir,
        }))
        .expect("static config");
        cfg.validate().expect("defaults are valid");
        cfg
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::parse(&read(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.dataset);
        resolve(base, &mut self.run_dir);
        for p in [&mut self.initial_skill, &mut self.prompts_dir].into_iter().flatten() {
            resolve(base, p);
        }
        for spec in [Some(&mut self.optimizer), self.target.as_mut()].into_iter().flatten() {
            match spec {
                BackendSpec::Scripted { script } => resolve(base, script),
                BackendSpec::SimbenchOracle { rules: Some(r), .. } => resolve(base, r),
                _ => {}
            }
        }
        if let HarnessSpec::WorkspaceCli { root: Some(r), .. } = &mut self.harness {
            resolve(base, r);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("batch_size", self.batch_size),
            ("accumulation", self.accumulation),
            ("minibatch_size", self.minibatch_size),
            ("reflection_workers", self.reflection_workers),
            ("rollout_workers", self.rollout_workers),
            ("refinement_rounds", self.refinement_rounds),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        if self.merge_batch_size < 2 {
            return Err(invalid("merge_batch_size must be at least 2"));
        }
        self.split.validate().map_err(|e| invalid(e.to_string()))?;
        self.schedule.spec(1).validate().map_err(|e| invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return Err(invalid("success_threshold must lie in [0, 1]"));
        }
        if matches!(self.harness, HarnessSpec::DirectChat { .. }) && self.target.is_none() {
            return Err(invalid("direct_chat harness needs a target backend"));
        }
        if matches!(self.optimizer, BackendSpec::SimTarget) {
            return Err(invalid("sim_target cannot act as the optimizer"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of everything that shapes the run, used to refuse mismatched resumes.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Everything a training run needs besides the config itself.
pub struct RunParts {
    pub harness: Arc<dyn Harness>,
    pub reflector: Reflector,
    pub ledger: Arc<UsageLedger>,
    pub splits: Splits,
    pub initial_skill: SkillDocument,
}

pub fn load_skill(path: &Path) -> Result<SkillDocument, ConfigError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    SkillDocument::parse_bytes(&bytes).map_err(|e| invalid(format!("skill {}: {e}", path.display())))
}

fn rules_for(dataset: &Path, explicit: Option<&PathBuf>) -> Result<Vec<simbench::SimRule>, ConfigError> {
    let path = explicit.cloned().unwrap_or_else(|| simbench::rules_path(dataset));
    simbench::load_rules(&path).map(|r| r.rules).map_err(|e| invalid(e.to_string()))
}

/// Builds a backend from its spec. `tasks` feeds the simulated target.
pub fn build_backend(spec: &BackendSpec, dataset: &Path, tasks: &[Task]) -> Result<(Arc<dyn ChatBackend>, String, ReasoningEffort), ConfigError> {
    Ok(match spec {
        BackendSpec::Scripted { script } => (
            Arc::new(ScriptedBackend::load(script).map_err(|e| invalid(e.to_string()))?),
            "scripted".into(),
            ReasoningEffort::default(),
        ),
        BackendSpec::Live { base_url, model, api_key_env, timeout_secs, reasoning_effort } => {
            let mut live: LiveConfig = serde_json::from_value(serde_json::json!({"base_url": base_url}))?;
            if let Some(env) = api_key_env {
                live.api_key_env = env.clone();
            }
            if let Some(t) = timeout_secs {
                live.timeout_secs = *t;
            }
            (Arc::new(LiveBackend::new(&live).map_err(|e| invalid(e.to_string()))?), model.clone(), *reasoning_effort)
        }
        BackendSpec::SimTarget => {
            let rules = simbench::rule_tasks(tasks).map_err(|e| invalid(e.to_string()))?;
            (Arc::new(SimTargetBackend::new(rules)), "sim-target".into(), ReasoningEffort::default())
        }
        BackendSpec::SimbenchOracle { behavior, rules } => {
            let rules = rules_for(dataset, rules.as_ref())?;
            (Arc::new(OracleOptimizer::new(rules, *behavior)), "simbench-oracle".into(), ReasoningEffort::default())
        }
    })
}

pub fn build_harness(
    spec: &HarnessSpec,
    target: Option<&BackendSpec>,
    dataset: &Path,
    tasks: &[Task],
    ledger: &Arc<UsageLedger>,
    threshold: f64,
    run_dir: &Path,
) -> Result<Arc<dyn Harness>, ConfigError> {
    Ok(match spec {
        HarnessSpec::Simbench => {
            simbench::rule_tasks(tasks).map_err(|e| invalid(e.to_string()))?;
            Arc::new(SimBenchHarness::new())
        }
        HarnessSpec::DirectChat { base_prompt, answer_marker, scorer } => {
            let target = target.ok_or_else(|| invalid("direct_chat harness needs a target backend"))?;
            let (backend, model, effort) = build_backend(target, dataset, tasks)?;
            let client = Client::new(backend, ledger.clone(), model).with_reasoning_effort(effort);
            Arc::new(
                DirectChatHarness::new(client, *scorer)
                    .with_base_prompt(base_prompt.clone())
                    .with_answer_marker(answer_marker.clone())
                    .with_threshold(threshold),
            )
        }
        HarnessSpec::WorkspaceCli { workspace, root } => {
            let root = root.clone().unwrap_or_else(|| run_dir.join("workspaces"));
            Arc::new(WorkspaceCliHarness::new(workspace.clone(), root, threshold).map_err(|e| invalid(e.to_string()))?)
        }
    })
}

impl RunParts {
    pub fn build(cfg: &RunConfig) -> Result<Self, ConfigError> {
        Self::build_with(cfg, None)
    }

    /// Like [`RunParts::build`], with an optional harness replacing the
    /// configured one (used to instrument runs).
    pub fn build_with(cfg: &RunConfig, harness: Option<Arc<dyn Harness>>) -> Result<Self, ConfigError> {
        let tasks = dataset::load_jsonl(&cfg.dataset).map_err(|e| invalid(e.to_string()))?;
        let splits = dataset::split(&tasks, &cfg.split).map_err(|e| invalid(e.to_string()))?;
        if splits.selection.is_empty() {
            return Err(invalid("the selection split is empty; adjust split ratios"));
        }
        if splits.test.is_empty() {
            return Err(invalid("the test split is empty; adjust split ratios"));
        }
        if cfg.epochs > 0 && splits.train.is_empty() {
            return Err(invalid("the train split is empty; adjust split ratios"));
        }
        let ledger = Arc::new(UsageLedger::default());
        let harness = match harness {
            Some(h) => h,
            None => build_harness(
                &cfg.harness,
                cfg.target.as_ref(),
                &cfg.dataset,
                &tasks,
                &ledger,
                cfg.success_threshold,
                &cfg.run_dir,
            )?,
        };
        let (backend, model, effort) = build_backend(&cfg.optimizer, &cfg.dataset, &tasks)?;
        let client = Client::new(backend, ledger.clone(), model).with_reasoning_effort(effort);
        let prompts = match &cfg.prompts_dir {
            Some(dir) => PromptSet::with_overrides(dir).map_err(|source| ConfigError::Io { path: dir.display().to_string(), source })?,
            None => PromptSet::default(),
        };
        let settings = ReflectSettings {
            refinement_rounds: cfg.refinement_rounds,
            trace_char_cap: cfg.trace_char_cap,
            workers: cfg.reflection_workers,
            merge_batch_size: cfg.merge_batch_size,
        };
        let initial_skill = match &cfg.initial_skill {
            Some(p) => load_skill(p)?,
            None => SkillDocument::empty(),
        };
        Ok(Self { harness, reflector: Reflector::new(client, prompts, settings), ledger, splits, initial_skill })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"dataset": "d.jsonl", "harness": {"kind": "simbench"},
            "optimizer": {"kind": "simbench_oracle", "behavior": "helpful"}}"#
    }

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = RunConfig::parse(minimal()).unwrap();
        assert_eq!((c.epochs, c.batch_size, c.accumulation, c.minibatch_size), (4, 40, 1, 8));
        assert_eq!((c.reflection_workers, c.merge_batch_size), (16, 8));
        assert_eq!(c.schedule, ScheduleConfig { kind: ScheduleKind::Cosine, initial_budget: 4, floor: 2, autonomous_max: 8 });
        assert_eq!(c.edit_mode, EditMode::Patch);
        assert_eq!(c.refinement_rounds, 3);
        assert_eq!(c.slow_update, SlowUpdateConfig { enabled: true, samples: 20 });
        assert!(c.meta_skill);
        assert_eq!(c.buffer_cap, 20);
        assert_eq!(c.split, SplitSpec::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::parse(minimal()).unwrap();
        c.resolve_paths(Path::new("/base"));
        assert_eq!(c.dataset, PathBuf::from("/base/d.jsonl"));
        let again = RunConfig::parse(&c.to_json()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.digest(), c.digest());
    }

    #[test]
    fn rejects_bad_values() {
        let bad = minimal().replace("\"dataset\"", "\"batch_size\": 0, \"dataset\"");
        assert!(RunConfig::parse(&bad).unwrap_err().to_string().contains("batch_size"));
        let typo = minimal().replace("\"dataset\"", "\"epoch\": 2, \"dataset\"");
        assert!(RunConfig::parse(&typo).is_err());
        let chat = minimal().replace(r#"{"kind": "simbench"}"#, r#"{"kind": "direct_chat"}"#);
        assert!(RunConfig::parse(&chat).unwrap_err().to_string().contains("target"));
    }

    #[test]
    fn empty_selection_split_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("sim.jsonl");
        simbench::generate(20, 2, 0.3, 1).unwrap().write(&data).unwrap();
        let mut cfg = RunConfig::simbench(data, OracleBehavior::Helpful, dir.path().join("run"));
        cfg.split.ratios = [1.0, 0.0, 1.0];
        let err = RunParts::build(&cfg).err().unwrap();
        assert!(err.to_string().contains("selection split"));
    }
}
