//! Command implementations behind the `skilltune` binary. Each returns data
//! rather than printing so it can be driven from tests and bindings.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Phase, UsageLedger};
use crate::config::{build_harness, load_skill, BackendSpec, ConfigError, HarnessSpec, RunConfig};
use crate::dataset::{self, SplitSpec};
use crate::harness::{mean_score, run_batch, Scorer};
use crate::simbench;
use crate::trainer::{self, Exports, RunReport, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            TrainError::Resume(m) => CliError::Config(format!("cannot resume: {m}")),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub struct TrainSummary {
    pub report: RunReport,
    pub exports: Exports,
}

pub fn cmd_train(config_path: &Path, resume: bool) -> Result<TrainSummary, CliError> {
    let config = RunConfig::load(config_path)?;
    let report = trainer::train(&config, resume)?;
    Ok(TrainSummary { report, exports: Exports::under(&config.run_dir) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Selection,
    Test,
    All,
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "selection" => Ok(SplitName::Selection),
            "test" => Ok(SplitName::Test),
            "all" => Ok(SplitName::All),
            other => Err(format!("unknown split {other:?}; use train, selection, test or all")),
        }
    }
}

/// A harness binding for evaluation: a harness plus, for chat harnesses, the
/// target backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessBinding {
    pub harness: HarnessSpec,
    #[serde(default)]
    pub target: Option<BackendSpec>,
}

impl HarnessBinding {
    /// `simbench`, `simbench-chat` (chat harness over the simulated target),
    /// or a path to a JSON binding file.
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        match spec {
            "simbench" => Ok(Self { harness: HarnessSpec::Simbench, target: None }),
            "simbench-chat" => Ok(Self {
                harness: HarnessSpec::DirectChat {
                    base_prompt: "Report the final status of the job.".into(),
                    answer_marker: Some("Answer:".into()),
                    scorer: Scorer::ExactMatch,
                },
                target: Some(BackendSpec::SimTarget),
            }),
            path => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("harness spec {path:?} is neither a known name nor a readable file: {e}")))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad harness binding {path}: {e}")))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub skill: PathBuf,
    pub dataset: PathBuf,
    pub split: SplitName,
    pub harness: String,
    pub split_spec: SplitSpec,
    pub workers: usize,
    pub success_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_task: Vec<(String, f64)>,
    pub mean: f64,
    pub harness: String,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Evaluation, CliError> {
    let skill = load_skill(&args.skill)?;
    let tasks = dataset::load_jsonl(&args.dataset).map_err(|e| CliError::Config(e.to_string()))?;
    let chosen = match args.split {
        SplitName::All => tasks.clone(),
        name => {
            let splits = dataset::split(&tasks, &args.split_spec).map_err(|e| CliError::Config(e.to_string()))?;
            match name {
                SplitName::Train => splits.train,
                SplitName::Selection => splits.selection,
                _ => splits.test,
            }
        }
    };
    if chosen.is_empty() {
        return Err(CliError::Config(format!("the {:?} split is empty", args.split).to_lowercase()));
    }
    let binding = HarnessBinding::parse(&args.harness)?;
    let scratch = std::env::temp_dir().join(format!("skilltune-eval-{}", std::process::id()));
    let harness = build_harness(
        &binding.harness,
        binding.target.as_ref(),
        &args.dataset,
        &tasks,
        &Arc::new(UsageLedger::default()),
        args.success_threshold,
        &scratch,
    )?;
    let trajs = run_batch(harness.as_ref(), &chosen, &skill, args.workers, Phase::TestEval);
    Ok(Evaluation {
        per_task: trajs.iter().map(|t| (t.task_id.clone(), t.score)).collect(),
        mean: mean_score(&trajs).unwrap_or(0.0),
        harness: harness.kind().to_owned(),
    })
}

pub fn load_report(run_dir: &Path) -> Result<RunReport, CliError> {
    let path = Exports::under(run_dir).run_report;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("no run report at {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("unreadable run report: {e}")))
}

pub fn cmd_report(run_dir: &Path) -> Result<String, CliError> {
    Ok(load_report(run_dir)?.render())
}

pub fn cmd_generate(out: &Path, tasks: usize, rules: usize, base_rate: f64, seed: u64) -> Result<simbench::SimDataset, CliError> {
    let ds = simbench::generate(tasks, rules, base_rate, seed).map_err(|e| CliError::Config(e.to_string()))?;
    ds.write(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(ds)
}

/// Parses `a:b:c` split ratios.
pub fn parse_ratios(text: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad ratio {p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected three ratios like 2:1:7, got {text:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_and_splits_parse() {
        assert_eq!(parse_ratios("2:1:7").unwrap(), [2.0, 1.0, 7.0]);
        assert!(parse_ratios("2:1").is_err());
        assert_eq!("all".parse::<SplitName>().unwrap(), SplitName::All);
        assert!("dev".parse::<SplitName>().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 3);
    }

    #[test]
    fn empty_skill_scores_base_rate_on_all() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("sim.jsonl");
        cmd_generate(&data, 50, 5, 0.3, 4).unwrap();
        let skill = dir.path().join("empty.md");
        std::fs::write(&skill, "").unwrap();
        let args = EvaluateArgs {
            skill,
            dataset: data,
            split: SplitName::All,
            harness: "simbench".into(),
            split_spec: SplitSpec::default(),
            workers: 4,
            success_threshold: 1.0,
        };
        let a = cmd_evaluate(&args).unwrap();
        assert_eq!(a.mean, 0.3);
        let b = cmd_evaluate(&EvaluateArgs { harness: "simbench-chat".into(), ..args }).unwrap();
        assert_eq!((b.mean, b.harness.as_str()), (0.3, "direct_chat"));
    }
}
