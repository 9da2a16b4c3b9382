//! Task collections and deterministic train/selection/test splits.
//!
//! Permutations use ChaCha8 seeded through `seed_from_u64` and a Fisher-Yates
//! pass whose index draw is `(next_u64 * (i + 1)) >> 64`. Both are part of the
//! split format: changing either changes every exported `splits.json`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read dataset {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate task_id {0:?}")]
    DuplicateId(String),
    #[error("dataset is empty")]
    Empty,
    #[error("invalid split ratios: {0}")]
    Ratios(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    #[serde(default)]
    pub payload: Value,
    #[serde(default)]
    pub reference: Value,
}

impl Task {
    /// Prompt text for chat-style harnesses: `payload.prompt`, or the payload
    /// itself when it is a plain string.
    pub fn prompt(&self) -> String {
        match &self.payload {
            Value::String(s) => s.clone(),
            Value::Object(map) => match map.get("prompt") {
                Some(Value::String(s)) => s.clone(),
                _ => self.payload.to_string(),
            },
            other => other.to_string(),
        }
    }

    pub fn reference_text(&self) -> String {
        match &self.reference {
            Value::String(s) => s.clone(),
            Value::Null => String::new(),
            other => other.to_string(),
        }
    }
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Task>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_jsonl(&text)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Task>, DatasetError> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: Task = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(task.task_id.clone()) {
            return Err(DatasetError::DuplicateId(task.task_id));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn to_jsonl(tasks: &[Task]) -> String {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&serde_json::to_string(t).expect("task serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [2.0, 1.0, 7.0],
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(DatasetError::Ratios("ratios must be finite and non-negative".into()));
        }
        if self.ratios.iter().sum::<f64>() <= 0.0 {
            return Err(DatasetError::Ratios("ratios must sum to a positive value".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<Task>,
    pub selection: Vec<Task>,
    pub test: Vec<Task>,
}

/// Membership lists exported as `splits.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [String; 3],
    pub train: Vec<String>,
    pub selection: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn manifest(&self, spec: &SplitSpec) -> SplitManifest {
        let ids = |v: &[Task]| v.iter().map(|t| t.task_id.clone()).collect();
        SplitManifest {
            seed: spec.seed,
            ratios: spec.ratios.map(|r| r.to_string()),
            train: ids(&self.train),
            selection: ids(&self.selection),
            test: ids(&self.test),
        }
    }
}

fn draw_below(rng: &mut ChaCha8Rng, bound: usize) -> usize {
    ((rng.next_u64() as u128 * bound as u128) >> 64) as usize
}

/// Seeded Fisher-Yates permutation.
pub fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = draw_below(&mut rng, i + 1);
        items.swap(i, j);
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor() as usize
}

pub fn split(tasks: &[Task], spec: &SplitSpec) -> Result<Splits, DatasetError> {
    if tasks.is_empty() {
        return Err(DatasetError::Empty);
    }
    spec.validate()?;
    let n = tasks.len();
    let total: f64 = spec.ratios.iter().sum();
    let n_train = round_half_up(n as f64 * spec.ratios[0] / total).min(n);
    let n_sel = round_half_up(n as f64 * spec.ratios[1] / total).min(n - n_train);

    let mut shuffled = tasks.to_vec();
    seeded_shuffle(&mut shuffled, spec.seed);
    let test = shuffled.split_off(n_train + n_sel);
    let selection = shuffled.split_off(n_train);
    Ok(Splits {
        train: shuffled,
        selection,
        test,
    })
}

/// Seed for the shuffle of epoch `epoch` (zero-based).
pub fn epoch_seed(split_seed: u64, epoch: usize) -> u64 {
    split_seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Shuffles `train` with `seed` and chunks it into batches of `batch_size`.
pub fn epoch_batches(train: &[Task], batch_size: usize, seed: u64) -> Vec<Vec<Task>> {
    let batch_size = batch_size.max(1);
    let mut order = train.to_vec();
    seeded_shuffle(&mut order, seed);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}
