use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::LedgerSnapshot;
use crate::reflect::RejectedStep;
use crate::score::ExactScore;
use crate::skilldoc::SkillDocument;

use super::report::{BoundaryRecord, EpochRecord, StepRecord};
use super::TrainError;

/// Everything needed to continue a run after a crash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config_digest: String,
    pub s_0: SkillDocument,
    pub s_cur: SkillDocument,
    pub s_best: SkillDocument,
    pub seed_score: ExactScore,
    pub score_cur: ExactScore,
    pub score_best: ExactScore,
    /// Skill hash to exact selection score.
    pub cache: BTreeMap<String, ExactScore>,
    pub rejected_buffer: Vec<RejectedStep>,
    pub meta_skill: String,
    /// Zero-based epoch currently running, or `epochs` once all are done.
    pub epoch: usize,
    pub step_in_epoch: usize,
    /// Global step counter driving the schedule.
    pub t: usize,
    /// Skill at the end of the previous epoch, for longitudinal comparison.
    pub prev_epoch_end: Option<SkillDocument>,
    pub epoch_rollout_scores: Vec<f64>,
    pub ledger: LedgerSnapshot,
    pub steps: Vec<StepRecord>,
    pub boundaries: Vec<BoundaryRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Number of times this state has been written.
    pub saves: usize,
}

impl OptimizerState {
    pub fn new(config_digest: String, s_0: SkillDocument, seed_score: ExactScore) -> Self {
        let mut cache = BTreeMap::new();
        cache.insert(s_0.hash(), seed_score.clone());
        Self {
            config_digest,
            s_cur: s_0.clone(),
            s_best: s_0.clone(),
            s_0,
            score_cur: seed_score.clone(),
            score_best: seed_score.clone(),
            seed_score,
            cache,
            rejected_buffer: Vec::new(),
            meta_skill: String::new(),
            epoch: 0,
            step_in_epoch: 0,
            t: 0,
            prev_epoch_end: None,
            epoch_rollout_scores: Vec::new(),
            ledger: LedgerSnapshot::default(),
            steps: Vec::new(),
            boundaries: Vec::new(),
            epochs: Vec::new(),
            saves: 0,
        }
    }

    /// The cache agrees with both tracked scores.
    pub fn is_consistent(&self) -> bool {
        self.cache.get(&self.s_cur.hash()) == Some(&self.score_cur)
            && self.cache.get(&self.s_best.hash()) == Some(&self.score_best)
            && self.score_best >= self.score_cur
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TrainError> {
    let io = |source| TrainError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn state_path(run_dir: &Path, n: usize) -> PathBuf {
    run_dir.join("state").join(format!("step_{n}.json"))
}

pub fn save(run_dir: &Path, state: &mut OptimizerState) -> Result<(), TrainError> {
    state.saves += 1;
    let text = serde_json::to_string_pretty(state).expect("state serializes");
    write_atomic(&state_path(run_dir, state.saves), text.as_bytes())
}

/// Most recently written state in `run_dir`, if any.
pub fn load_latest(run_dir: &Path) -> Result<Option<OptimizerState>, TrainError> {
    let dir = run_dir.join("state");
    let Ok(entries) = fs::read_dir(&dir) else {
        return Ok(None);
    };
    let latest = entries
        .filter_map(Result::ok)
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n: usize = name.strip_prefix("step_")?.strip_suffix(".json")?.parse().ok()?;
            Some((n, e.path()))
        })
        .max_by_key(|(n, _)| *n);
    let Some((_, path)) = latest else {
        return Ok(None);
    };
    let text = fs::read_to_string(&path).map_err(|source| TrainError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| TrainError::State(format!("{}: {e}", path.display())))
}
