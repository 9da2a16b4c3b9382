use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Rollout,
    Reflection,
    Merge,
    Ranking,
    GateEval,
    SlowUpdate,
    MetaUpdate,
    TestEval,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::Rollout,
        Phase::Reflection,
        Phase::Merge,
        Phase::Ranking,
        Phase::GateEval,
        Phase::SlowUpdate,
        Phase::MetaUpdate,
        Phase::TestEval,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    fn add(&mut self, other: Usage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

/// Exported as `usage_ledger.json`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub phases: BTreeMap<Phase, Usage>,
    pub total: Usage,
    pub calls: u64,
}

impl LedgerSnapshot {
    pub fn phase(&self, phase: Phase) -> Usage {
        self.phases.get(&phase).copied().unwrap_or_default()
    }

    pub fn is_consistent(&self) -> bool {
        let mut sum = Usage::default();
        self.phases.values().for_each(|u| sum.add(*u));
        sum == self.total
    }
}

#[derive(Debug, Default)]
pub struct UsageLedger {
    inner: Mutex<LedgerSnapshot>,
}

impl UsageLedger {
    pub fn from_snapshot(snapshot: LedgerSnapshot) -> Self {
        Self { inner: Mutex::new(snapshot) }
    }

    pub fn record(&self, phase: Phase, usage: Usage) {
        let mut inner = self.inner.lock().expect("ledger lock poisoned");
        inner.phases.entry(phase).or_default().add(usage);
        inner.total.add(usage);
        inner.calls += 1;
        debug_assert!(inner.is_consistent());
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        self.inner.lock().expect("ledger lock poisoned").clone()
    }

    pub fn restore(&self, snapshot: LedgerSnapshot) {
        *self.inner.lock().expect("ledger lock poisoned") = snapshot;
    }
}

/// Training tokens per percentage point of score gain (scores in [0, 1]).
pub fn cost_per_point(total_tokens: u64, baseline_score: f64, final_score: f64) -> Result<f64, String> {
    let gain = final_score - baseline_score;
    if !(gain > 0.0) {
        return Err(format!("cost per point undefined for non-positive gain {gain}"));
    }
    Ok(total_tokens as f64 / (100.0 * gain))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_examples() {
        assert!((cost_per_point(10_000_000, 0.5, 0.6).unwrap() - 1.0e6).abs() < 1e-3);
        assert_eq!(cost_per_point(0, 0.2, 0.3).unwrap(), 0.0);
        // 20.8M tokens over a 39.0 point gain
        let v = cost_per_point(20_800_000, 0.331, 0.721).unwrap();
        assert!((v - 533_333.33).abs() < 1.0);
        assert!(cost_per_point(5, 0.5, 0.5).is_err());
        assert!(cost_per_point(5, 0.6, 0.5).is_err());
    }

    #[test]
    fn snapshot_serializes_phase_keys() {
        let l = UsageLedger::default();
        l.record(Phase::GateEval, Usage { prompt_tokens: 2, completion_tokens: 1 });
        let json = serde_json::to_value(l.snapshot()).unwrap();
        assert_eq!(json["phases"]["gate_eval"]["prompt_tokens"], 2);
        assert_eq!(json["total"]["completion_tokens"], 1);
    }
}
