use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{approx_tokens, BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};
use crate::reflect::{extract_skill, ContractName, PromptSet};
use crate::skilldoc::{EditOp, SourceType};

use super::SimRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleBehavior {
    /// Appends the rule lines of failing tasks.
    Helpful,
    /// Appends penalty phrases for the rules it sees.
    Harmful,
    /// Alternates helpful lines with penalties of a neighbouring rule.
    Mixed,
    /// Never proposes anything.
    Empty,
}

/// Scripted optimizer for simbench. It recognises each contract by its exact
/// system prompt and answers from what the rendered user message shows, so
/// replies do not depend on call order.
#[derive(Debug, Clone)]
pub struct OracleOptimizer {
    rules: Vec<SimRule>,
    behavior: OracleBehavior,
    prompts: PromptSet,
}

const GUIDANCE: &str = "Before reporting a status, find the rule that governs the task and confirm the skill tells you how to apply it.";
const HARMFUL_GUIDANCE_PREFIX: &str = "Skip verification and rely on shortcuts:";
const MEMORY: &str = "Edits that name the governing rule of failing tasks were accepted; shortcut phrases were rejected.";

fn number_after(message: &str, prefix: &str) -> Option<usize> {
    let at = message.find(prefix)? + prefix.len();
    message[at..].split_whitespace().next()?.parse().ok()
}

impl OracleOptimizer {
    pub fn new(rules: Vec<SimRule>, behavior: OracleBehavior) -> Self {
        Self { rules, behavior, prompts: PromptSet::default() }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    fn rules_seen(&self, message: &str) -> Vec<usize> {
        let mut seen = Vec::new();
        for line in message.lines() {
            if let Some(token) = line.trim().strip_prefix("required rule: ") {
                if let Some(i) = self.rules.iter().position(|r| r.token == token.trim()) {
                    if !seen.contains(&i) {
                        seen.push(i);
                    }
                }
            }
        }
        seen
    }

    fn analyst(&self, message: &str, failures: bool) -> Value {
        let skill = extract_skill(message).unwrap_or_default();
        let budget = number_after(message, "Produce at most ").unwrap_or(usize::MAX);
        let seen = self.rules_seen(message);
        let helpful = |i: &usize| {
            let r = &self.rules[*i];
            (!skill.contains(&r.token)).then(|| EditOp::append(r.helpful_line()))
        };
        let harmful = |i: &usize| {
            let r = &self.rules[*i];
            (!skill.contains(&r.penalty_token)).then(|| EditOp::append(r.harmful_line()))
        };
        let mut edits: Vec<EditOp> = match (self.behavior, failures) {
            (OracleBehavior::Helpful, true) => seen.iter().filter_map(helpful).collect(),
            (OracleBehavior::Harmful, _) => seen.iter().filter_map(harmful).collect(),
            (OracleBehavior::Mixed, true) => seen
                .iter()
                .flat_map(|i| {
                    let neighbour = (i + 1) % self.rules.len();
                    [helpful(i), harmful(&neighbour)]
                })
                .flatten()
                .collect(),
            _ => Vec::new(),
        };
        let mut unique: Vec<EditOp> = Vec::new();
        edits.retain(|e| {
            let fresh = !unique.contains(e);
            unique.push(e.clone());
            fresh
        });
        edits.truncate(budget);
        let mut out = json!({
            "batch_size": message.matches("### Trajectory ").count(),
            "patch": {"reasoning": "rules observed in the batch", "edits": edits},
        });
        if failures {
            out["failure_summary"] = json!(seen
                .iter()
                .map(|i| json!({"failure_type": "missing rule", "count": 1, "description": format!("rule {} not applied", self.rules[*i].token)}))
                .collect::<Vec<_>>());
        } else {
            out["success_patterns"] = json!([]);
        }
        out
    }

    fn merge(&self, message: &str, source: Option<SourceType>) -> Value {
        let mut merged: Vec<EditOp> = Vec::new();
        for line in message.lines().filter(|l| l.starts_with("{\"edits\"")) {
            let Ok(patch) = serde_json::from_str::<Value>(line) else { continue };
            let Ok(edits) = serde_json::from_value::<Vec<EditOp>>(patch["edits"].clone()) else { continue };
            for mut e in edits {
                if let Some(src) = source {
                    e.source_type = Some(src);
                }
                let same = |m: &&mut EditOp| m.op == e.op && m.target == e.target && m.content == e.content;
                match merged.iter_mut().find(same) {
                    Some(m) => m.support_count += e.support_count,
                    None => merged.push(e),
                }
            }
        }
        json!({"reasoning": "deduplicated identical edits", "edits": merged})
    }

    fn rank(&self, message: &str) -> Value {
        let budget = number_after(message, "Select at most ").unwrap_or(usize::MAX);
        let mut pool: Vec<(usize, u32)> =
            Self::indexed_edits(message).into_iter().map(|(i, e)| (i, e.support_count)).collect();
        pool.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let selected: Vec<usize> = pool.into_iter().map(|(i, _)| i).take(budget).collect();
        json!({"reasoning": "higher support first", "selected_indices": selected})
    }

    fn indexed_edits(message: &str) -> Vec<(usize, EditOp)> {
        message
            .lines()
            .filter_map(|line| {
                let (idx, body) = line.strip_prefix('[')?.split_once("] ")?;
                Some((idx.parse().ok()?, serde_json::from_str(body).ok()?))
            })
            .collect()
    }

    /// Appends every suggested append to the current body.
    fn rewrite(&self, message: &str) -> Value {
        let mut body = extract_skill(message).unwrap_or_default().trim_end().to_owned();
        for (_, e) in Self::indexed_edits(message) {
            if let (crate::skilldoc::OpKind::Append, Some(c)) = (e.op, e.content) {
                if !body.is_empty() {
                    body.push('\n');
                }
                body.push_str(&c);
            }
        }
        json!({"reasoning": "folded the suggestions into the body", "rewritten_skill": body})
    }

    fn slow_update(&self) -> Value {
        let content = match self.behavior {
            OracleBehavior::Helpful | OracleBehavior::Mixed => GUIDANCE.to_owned(),
            OracleBehavior::Harmful => {
                let phrases: Vec<&str> = self.rules.iter().map(|r| r.penalty_token.as_str()).collect();
                format!("{HARMFUL_GUIDANCE_PREFIX} {}.", phrases.join(", "))
            }
            OracleBehavior::Empty => String::new(),
        };
        json!({"reasoning": "longitudinal comparison reviewed", "slow_update_content": content})
    }

    pub fn respond(&self, req: &ChatRequest) -> Result<Value, BackendError> {
        let contract = self
            .prompts
            .identify(req.system())
            .ok_or_else(|| BackendError::Config("oracle optimizer received an unknown contract".into()))?;
        let message = req.last_user();
        Ok(match contract {
            ContractName::AnalystError => self.analyst(message, true),
            ContractName::AnalystSuccess => self.analyst(message, false),
            ContractName::MergeFailure => self.merge(message, Some(SourceType::Failure)),
            ContractName::MergeSuccess => self.merge(message, Some(SourceType::Success)),
            ContractName::MergeFinal => self.merge(message, None),
            ContractName::Ranking => self.rank(message),
            ContractName::SlowUpdate => self.slow_update(),
            ContractName::MetaSkill => json!({"reasoning": "epoch reviewed", "meta_skill_content": MEMORY}),
            ContractName::Rewrite => self.rewrite(message),
        })
    }
}

impl ChatBackend for OracleOptimizer {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let content = self.respond(req)?.to_string();
        let usage = Usage {
            prompt_tokens: req.messages.iter().map(|m| approx_tokens(&m.content)).sum(),
            completion_tokens: approx_tokens(&content),
        };
        Ok(ChatResponse { content, usage, latency_ms: 0.0 })
    }
}
