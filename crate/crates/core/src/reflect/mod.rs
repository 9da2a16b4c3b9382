//! The backward pass: per-minibatch analysis, hierarchical merging, and
//! ranking of edit proposals, plus the epoch-boundary calls.

mod contracts;
pub mod render;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{BackendError, Client, Message, Phase};
use crate::harness::Trajectory;
use crate::pool::map_ordered;
use crate::skilldoc::{EditOp, SkillDocument, SourceType};

pub use contracts::{ContractName, PromptSet};
pub use render::{
    buffer_digest, extract_skill, tail_chars, Category, ComparedTask, Comparison, RejectedStep,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub minibatch: usize,
    pub source_type: SourceType,
}

/// An edit the optimizer proposed but that never reached the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedEdit {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditProposal {
    pub reasoning: String,
    pub edits: Vec<EditOp>,
    pub origin: Origin,
    #[serde(default)]
    pub failure_patterns: Vec<String>,
    #[serde(default)]
    pub dropped: Vec<DroppedEdit>,
}

impl EditProposal {
    pub fn empty(origin: Origin) -> Self {
        Self {
            reasoning: String::new(),
            edits: Vec::new(),
            origin,
            failure_patterns: Vec::new(),
            dropped: Vec::new(),
        }
    }
}

/// Failure and success minibatches, each side chunked in input order.
pub fn partition(trajs: &[Trajectory], minibatch_size: usize) -> (Vec<Vec<Trajectory>>, Vec<Vec<Trajectory>>) {
    let size = minibatch_size.max(1);
    let (fail, succ): (Vec<_>, Vec<_>) = trajs.iter().cloned().partition(|t| !t.success);
    let chunk = |v: Vec<Trajectory>| v.chunks(size).map(<[_]>::to_vec).collect();
    (chunk(fail), chunk(succ))
}

/// Reads an edit list leniently: each entry is checked on its own so one bad
/// edit does not sink the rest.
pub fn parse_edits(value: Option<&Value>, skill: &SkillDocument) -> (Vec<EditOp>, Vec<DroppedEdit>) {
    let mut edits = Vec::new();
    let mut dropped = Vec::new();
    let Some(Value::Array(items)) = value else {
        return (edits, dropped);
    };
    for (index, item) in items.iter().enumerate() {
        let mut item = item.clone();
        if let Value::Object(map) = &mut item {
            map.retain(|_, v| !v.is_null());
            let op = map.get("op").and_then(Value::as_str).unwrap_or_default().to_owned();
            let blank = |v: Option<&Value>| v.and_then(Value::as_str).is_some_and(|s| s.is_empty());
            if op == "append" && blank(map.get("target")) {
                map.remove("target");
            }
            if op == "delete" && blank(map.get("content")) {
                map.remove("content");
            }
        }
        let edit: EditOp = match serde_json::from_value(item) {
            Ok(e) => e,
            Err(e) => {
                dropped.push(DroppedEdit { index, reason: format!("unparseable edit: {e}") });
                continue;
            }
        };
        if let Err(reason) = edit.validate() {
            dropped.push(DroppedEdit { index, reason });
            continue;
        }
        if edit.touches_markers() || skill.edit_hits_protected(&edit) {
            dropped.push(DroppedEdit { index, reason: "targets the protected region".into() });
            continue;
        }
        edits.push(edit);
    }
    (edits, dropped)
}

fn text_field(value: &Value, key: &str) -> Option<String> {
    value.get(key).and_then(Value::as_str).map(str::to_owned)
}

fn failure_patterns(value: &Value) -> Vec<String> {
    let Some(Value::Array(items)) = value.get("failure_summary") else {
        return Vec::new();
    };
    items
        .iter()
        .filter_map(|item| {
            let kind = item.get("failure_type").and_then(Value::as_str)?;
            let count = item.get("count").and_then(Value::as_u64).unwrap_or(0);
            let desc = item.get("description").and_then(Value::as_str).unwrap_or_default();
            Some(format!("{kind} (x{count}): {desc}").trim_end_matches(": ").to_owned())
        })
        .collect()
}

/// Support descending, failure-sourced before success-sourced, then pool index.
pub fn fallback_order(pool: &[EditOp]) -> Vec<usize> {
    let rank = |e: &EditOp| match e.source_type {
        Some(SourceType::Failure) => 0,
        Some(SourceType::Success) => 1,
        None => 2,
    };
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.sort_by(|&a, &b| {
        pool[b]
            .support_count
            .cmp(&pool[a].support_count)
            .then(rank(&pool[a]).cmp(&rank(&pool[b])))
            .then(a.cmp(&b))
    });
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeStage {
    Failure,
    Success,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub edits: Vec<EditOp>,
    pub used_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectSettings {
    pub refinement_rounds: usize,
    pub trace_char_cap: usize,
    pub workers: usize,
    pub merge_batch_size: usize,
}

impl Default for ReflectSettings {
    fn default() -> Self {
        Self { refinement_rounds: 3, trace_char_cap: 4000, workers: 16, merge_batch_size: 8 }
    }
}

/// Everything one step's backward pass produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardOutcome {
    pub proposals: Vec<EditProposal>,
    pub merged: Vec<EditOp>,
    pub selected: Vec<EditOp>,
    pub ranking_fallback: bool,
    pub failure_patterns: Vec<String>,
    pub model_calls: usize,
    pub warnings: Vec<String>,
}

/// Drives the optimizer model through the prompt contracts.
pub struct Reflector {
    client: Client,
    prompts: PromptSet,
    settings: ReflectSettings,
}

impl Reflector {
    pub fn new(client: Client, prompts: PromptSet, settings: ReflectSettings) -> Self {
        Self { client, prompts, settings }
    }

    pub fn settings(&self) -> &ReflectSettings {
        &self.settings
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    fn call(&self, contract: ContractName, phase: Phase, user: String) -> Result<Value, BackendError> {
        let req = self.client.request(vec![
            Message::system(self.prompts.get(contract)),
            Message::user(user),
        ]);
        self.client.complete_json(phase, &req, self.settings.refinement_rounds)
    }

    fn workers(&self) -> usize {
        if self.client.sequential() {
            1
        } else {
            self.settings.workers
        }
    }

    pub fn analyze_minibatch(
        &self,
        origin: Origin,
        skill: &SkillDocument,
        minibatch: &[Trajectory],
        budget: usize,
        digest: &str,
        meta: &str,
    ) -> EditProposal {
        let contract = match origin.source_type {
            SourceType::Failure => ContractName::AnalystError,
            SourceType::Success => ContractName::AnalystSuccess,
        };
        let user = render::analyst_message(meta, skill, minibatch, budget, digest, self.settings.trace_char_cap);
        let value = match self.call(contract, Phase::Reflection, user) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("{contract} minibatch {} produced no proposal: {e}", origin.minibatch);
                return EditProposal::empty(origin);
            }
        };
        let patch = value.get("patch").unwrap_or(&value);
        let (mut edits, dropped) = parse_edits(patch.get("edits"), skill);
        for e in &mut edits {
            e.source_type = Some(origin.source_type);
        }
        for d in &dropped {
            log::warn!("{contract} minibatch {} edit {} dropped: {}", origin.minibatch, d.index, d.reason);
        }
        EditProposal {
            reasoning: text_field(patch, "reasoning").unwrap_or_default(),
            edits,
            origin,
            failure_patterns: failure_patterns(&value),
            dropped,
        }
    }

    /// Analyses every minibatch with bounded parallelism; results come back
    /// in minibatch order.
    pub fn analyze_all(
        &self,
        skill: &SkillDocument,
        batches: &[(Origin, Vec<Trajectory>)],
        budget: usize,
        digest: &str,
        meta: &str,
    ) -> Vec<EditProposal> {
        map_ordered(batches, self.workers(), |_, (origin, mb)| {
            self.analyze_minibatch(*origin, skill, mb, budget, digest, meta)
        })
    }

    fn merge_call(
        &self,
        contract: ContractName,
        skill: &SkillDocument,
        meta: &str,
        patches: &[(String, Vec<EditOp>)],
        default_source: Option<SourceType>,
    ) -> Result<(String, Vec<EditOp>), String> {
        let user = render::merge_message(meta, skill, patches);
        let value = self.call(contract, Phase::Merge, user).map_err(|e| e.to_string())?;
        let (mut edits, dropped) = parse_edits(value.get("edits"), skill);
        for d in &dropped {
            log::warn!("{contract} edit {} dropped: {}", d.index, d.reason);
        }
        if let Some(src) = default_source {
            for e in edits.iter_mut().filter(|e| e.source_type.is_none()) {
                e.source_type = Some(src);
            }
        }
        Ok((text_field(&value, "reasoning").unwrap_or_default(), edits))
    }

    /// Merges one side in rounds of at most `merge_batch_size` proposals per
    /// call until a single proposal remains. Returns it with the call count.
    pub fn merge_side(
        &self,
        stage: MergeStage,
        skill: &SkillDocument,
        meta: &str,
        inputs: Vec<EditProposal>,
    ) -> (Option<EditProposal>, usize) {
        let (contract, source) = match stage {
            MergeStage::Failure => (ContractName::MergeFailure, SourceType::Failure),
            MergeStage::Success => (ContractName::MergeSuccess, SourceType::Success),
        };
        let m = self.settings.merge_batch_size.max(2);
        let mut calls = 0;
        let mut level = inputs;
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(m));
            for chunk in level.chunks(m) {
                if chunk.len() == 1 {
                    next.push(chunk[0].clone());
                    continue;
                }
                calls += 1;
                let origin = chunk[0].origin;
                let patterns: Vec<String> = chunk.iter().flat_map(|p| p.failure_patterns.clone()).collect();
                let patches: Vec<(String, Vec<EditOp>)> = chunk
                    .iter()
                    .map(|p| (format!("{stage:?} minibatch {}", p.origin.minibatch).to_lowercase(), p.edits.clone()))
                    .collect();
                let merged = match self.merge_call(contract, skill, meta, &patches, Some(source)) {
                    Ok((reasoning, edits)) => EditProposal {
                        reasoning,
                        edits,
                        origin,
                        failure_patterns: patterns,
                        dropped: Vec::new(),
                    },
                    Err(e) => {
                        log::warn!("{contract} failed ({e}); concatenating {} proposals", chunk.len());
                        EditProposal {
                            reasoning: format!("merge degraded: {e}"),
                            edits: chunk.iter().flat_map(|p| p.edits.clone()).collect(),
                            origin,
                            failure_patterns: patterns,
                            dropped: Vec::new(),
                        }
                    }
                };
                next.push(merged);
            }
            level = next;
        }
        (level.pop(), calls)
    }

    /// Combines the two side survivors, failure first. A missing or editless
    /// side means the other passes through without a call.
    pub fn merge_final(
        &self,
        skill: &SkillDocument,
        meta: &str,
        failure: Option<EditProposal>,
        success: Option<EditProposal>,
    ) -> (Option<EditProposal>, usize) {
        let failure = failure.filter(|p| !p.edits.is_empty());
        let success = success.filter(|p| !p.edits.is_empty());
        let (f, s) = match (failure, success) {
            (Some(f), Some(s)) => (f, s),
            (one, None) | (None, one) => return (one, 0),
        };
        let patches = vec![
            ("failure".to_owned(), f.edits.clone()),
            ("success".to_owned(), s.edits.clone()),
        ];
        let patterns: Vec<String> = f.failure_patterns.iter().chain(&s.failure_patterns).cloned().collect();
        let merged = match self.merge_call(ContractName::MergeFinal, skill, meta, &patches, None) {
            Ok((reasoning, edits)) => EditProposal {
                reasoning,
                edits,
                origin: f.origin,
                failure_patterns: patterns,
                dropped: Vec::new(),
            },
            Err(e) => {
                log::warn!("merge_final failed ({e}); concatenating failure then success edits");
                EditProposal {
                    reasoning: format!("merge degraded: {e}"),
                    edits: f.edits.iter().chain(&s.edits).cloned().collect(),
                    origin: f.origin,
                    failure_patterns: patterns,
                    dropped: Vec::new(),
                }
            }
        };
        (Some(merged), 1)
    }

    /// Asks for a priority order over `pool` and keeps at most `budget` edits.
    pub fn rank_and_clip(&self, skill: &SkillDocument, meta: &str, pool: &[EditOp], budget: usize) -> Ranked {
        if pool.is_empty() || budget == 0 {
            return Ranked { edits: Vec::new(), used_fallback: false };
        }
        let user = render::ranking_message(meta, skill, pool, budget);
        let mut chosen: Vec<usize> = Vec::new();
        match self.call(ContractName::Ranking, Phase::Ranking, user) {
            Ok(value) => {
                if let Some(Value::Array(items)) = value.get("selected_indices") {
                    for item in items {
                        match item.as_u64().map(|i| i as usize) {
                            Some(i) if i < pool.len() && !chosen.contains(&i) => chosen.push(i),
                            _ => log::warn!("ranking returned unusable index {item}"),
                        }
                    }
                }
            }
            Err(e) => log::warn!("ranking failed ({e}); using fallback order"),
        }
        let used_fallback = chosen.is_empty();
        if used_fallback {
            chosen = fallback_order(pool);
        }
        chosen.truncate(budget);
        Ranked { edits: chosen.into_iter().map(|i| pool[i].clone()).collect(), used_fallback }
    }

    /// Full step-level backward pass over one or more accumulation slices.
    pub fn backward(
        &self,
        skill: &SkillDocument,
        slices: &[Vec<Trajectory>],
        minibatch_size: usize,
        budget: usize,
        digest: &str,
        meta: &str,
    ) -> BackwardOutcome {
        let mut batches = Vec::new();
        let (mut nf, mut ns) = (0, 0);
        let mut success_batches = Vec::new();
        for slice in slices {
            let (fail, succ) = partition(slice, minibatch_size);
            for mb in fail {
                batches.push((Origin { minibatch: nf, source_type: SourceType::Failure }, mb));
                nf += 1;
            }
            for mb in succ {
                success_batches.push((Origin { minibatch: ns, source_type: SourceType::Success }, mb));
                ns += 1;
            }
        }
        batches.extend(success_batches);
        let proposals = self.analyze_all(skill, &batches, budget, digest, meta);
        let mut model_calls = proposals.len();
        let mut warnings: Vec<String> = proposals
            .iter()
            .flat_map(|p| p.dropped.iter().map(move |d| format!("{:?} minibatch {} edit {}: {}", p.origin.source_type, p.origin.minibatch, d.index, d.reason)))
            .collect();
        let failure_patterns: Vec<String> = proposals.iter().flat_map(|p| p.failure_patterns.clone()).collect();

        let side = |src: SourceType| -> Vec<EditProposal> {
            proposals.iter().filter(|p| p.origin.source_type == src).cloned().collect()
        };
        let (f, fc) = self.merge_side(MergeStage::Failure, skill, meta, side(SourceType::Failure));
        let (s, sc) = self.merge_side(MergeStage::Success, skill, meta, side(SourceType::Success));
        let (merged, mc) = self.merge_final(skill, meta, f, s);
        model_calls += fc + sc + mc;
        let merged: Vec<EditOp> = merged.map(|p| p.edits).unwrap_or_default();

        let ranked = if merged.is_empty() {
            Ranked { edits: Vec::new(), used_fallback: false }
        } else {
            model_calls += 1;
            self.rank_and_clip(skill, meta, &merged, budget)
        };
        if ranked.used_fallback {
            warnings.push("ranking fell back to support order".into());
        }
        BackwardOutcome {
            proposals,
            merged,
            selected: ranked.edits,
            ranking_fallback: ranked.used_fallback,
            failure_patterns,
            model_calls,
            warnings,
        }
    }

    /// New guidance for the protected region, or `None` when the optimizer
    /// gave nothing usable.
    pub fn slow_update(
        &self,
        previous: &SkillDocument,
        current: &SkillDocument,
        comparison: &Comparison,
        previous_guidance: Option<&str>,
    ) -> Option<String> {
        let user = render::slow_update_message(previous, current, comparison, previous_guidance, self.settings.trace_char_cap);
        match self.call(ContractName::SlowUpdate, Phase::SlowUpdate, user) {
            Ok(v) => match text_field(&v, "slow_update_content") {
                Some(c) if !c.trim().is_empty() => Some(c),
                _ => {
                    log::warn!("slow update returned no slow_update_content; skipped");
                    None
                }
            },
            Err(e) => {
                log::warn!("slow update skipped: {e}");
                None
            }
        }
    }

    /// Updated optimizer memory, or `None` to keep the previous one.
    pub fn meta_update(
        &self,
        previous: &SkillDocument,
        current: &SkillDocument,
        comparison: &Comparison,
        previous_memory: &str,
    ) -> Option<String> {
        let user = render::meta_message(previous, current, comparison, previous_memory, self.settings.trace_char_cap);
        match self.call(ContractName::MetaSkill, Phase::MetaUpdate, user) {
            Ok(v) => match text_field(&v, "meta_skill_content") {
                Some(c) if !c.trim().is_empty() => Some(c),
                _ => {
                    log::warn!("meta update returned no meta_skill_content; memory kept");
                    None
                }
            },
            Err(e) => {
                log::warn!("meta update failed, memory kept: {e}");
                None
            }
        }
    }

    /// Full replacement body built from ranked suggestions.
    pub fn rewrite(&self, skill: &SkillDocument, suggestions: &[EditOp], budget: usize) -> Option<String> {
        let user = render::rewrite_message(skill, suggestions, budget);
        match self.call(ContractName::Rewrite, Phase::Reflection, user) {
            Ok(v) => text_field(&v, "rewritten_skill"),
            Err(e) => {
                log::warn!("rewrite failed: {e}");
                None
            }
        }
    }
}

#[cfg(test)]
mod tests;
