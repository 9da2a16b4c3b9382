//! User-message layouts for each optimizer call. The contract text itself is
//! sent unchanged as the system message.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::harness::Trajectory;
use crate::skilldoc::{EditOp, SkillDocument};

pub const MEMORY_HEADER: &str = "## Optimizer Memory";
pub const SKILL_OPEN: &str = "<<<SKILL";
pub const SKILL_CLOSE: &str = "SKILL>>>";
pub const BUDGET_HEADER: &str = "## Edit Budget";
pub const BUFFER_HEADER: &str = "## Rejected Edits This Epoch";
pub const TRAJECTORIES_HEADER: &str = "## Trajectories";
pub const PATCHES_HEADER: &str = "## Patches To Merge";
pub const POOL_HEADER: &str = "## Edit Pool";
pub const COMPARISON_HEADER: &str = "## Longitudinal Comparison";
pub const GUIDANCE_HEADER: &str = "## Previous Guidance";

/// Last `cap` characters of `text`.
pub fn tail_chars(text: &str, cap: usize) -> String {
    let n = text.chars().count();
    if n <= cap {
        return text.to_owned();
    }
    let tail: String = text.chars().skip(n - cap).collect();
    format!("[... truncated ...]{tail}")
}

fn head_chars(text: &str, cap: usize) -> String {
    text.chars().take(cap).collect()
}

fn push_memory(out: &mut String, meta: &str) {
    if !meta.trim().is_empty() {
        let _ = write!(out, "{MEMORY_HEADER}\n{}\n\n", meta.trim());
    }
}

fn push_skill(out: &mut String, title: &str, skill: &SkillDocument) {
    let _ = write!(out, "## {title}\n{SKILL_OPEN}\n{}\n{SKILL_CLOSE}\n\n", skill.serialize());
}

/// Pulls the first fenced skill back out of a rendered message.
pub fn extract_skill(message: &str) -> Option<&str> {
    let start = message.find(&format!("{SKILL_OPEN}\n"))? + SKILL_OPEN.len() + 1;
    let len = message[start..].find(&format!("\n{SKILL_CLOSE}"))?;
    Some(&message[start..start + len])
}

pub fn render_trajectory(out: &mut String, index: usize, t: &Trajectory, trace_cap: usize) {
    let _ = write!(
        out,
        "### Trajectory {}\ntask_id: {}\nscore: {}\nsuccess: {}\nfinal_answer: {}\ntrace:\n{}\n\n",
        index + 1,
        t.task_id,
        t.score,
        t.success,
        t.final_answer,
        tail_chars(&t.trace, trace_cap)
    );
}

pub fn analyst_message(
    meta: &str,
    skill: &SkillDocument,
    minibatch: &[Trajectory],
    budget: usize,
    buffer_digest: &str,
    trace_cap: usize,
) -> String {
    let mut out = String::new();
    push_memory(&mut out, meta);
    push_skill(&mut out, "Current Skill", skill);
    let _ = write!(out, "{BUDGET_HEADER}\nProduce at most {budget} edits.\n\n");
    let digest = if buffer_digest.trim().is_empty() { "(none)" } else { buffer_digest.trim() };
    let _ = write!(out, "{BUFFER_HEADER}\n{digest}\n\n");
    let _ = write!(out, "{TRAJECTORIES_HEADER} ({})\n", minibatch.len());
    for (i, t) in minibatch.iter().enumerate() {
        render_trajectory(&mut out, i, t, trace_cap);
    }
    out
}

/// One patch per line as compact JSON so it can be read back unambiguously.
pub fn merge_message(meta: &str, skill: &SkillDocument, patches: &[(String, Vec<EditOp>)]) -> String {
    let mut out = String::new();
    push_memory(&mut out, meta);
    push_skill(&mut out, "Current Skill", skill);
    let _ = writeln!(out, "{PATCHES_HEADER} ({})", patches.len());
    for (i, (label, edits)) in patches.iter().enumerate() {
        let body = serde_json::json!({ "edits": edits });
        let _ = write!(out, "### Patch {} ({label})\n{body}\n\n", i + 1);
    }
    out
}

pub fn ranking_message(meta: &str, skill: &SkillDocument, pool: &[EditOp], budget: usize) -> String {
    let mut out = String::new();
    push_memory(&mut out, meta);
    push_skill(&mut out, "Current Skill", skill);
    let _ = write!(out, "{BUDGET_HEADER}\nSelect at most {budget} edits.\n\n");
    let _ = writeln!(out, "{POOL_HEADER} ({})", pool.len());
    for (i, edit) in pool.iter().enumerate() {
        let _ = writeln!(out, "[{i}] {}", serde_json::to_string(edit).expect("edit serializes"));
    }
    out
}

pub fn rewrite_message(skill: &SkillDocument, suggestions: &[EditOp], budget: usize) -> String {
    let mut out = String::new();
    let body = SkillDocument::parse(&skill.body()).unwrap_or_default();
    push_skill(&mut out, "Current Skill", &body);
    let _ = write!(out, "{BUDGET_HEADER}\nApply at most {budget} suggestions.\n\n");
    let _ = writeln!(out, "## Suggestions ({})", suggestions.len());
    for (i, edit) in suggestions.iter().enumerate() {
        let _ = writeln!(out, "[{i}] {}", serde_json::to_string(edit).expect("edit serializes"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Improvement,
    Regression,
    PersistentFailure,
    StableSuccess,
}

impl Category {
    pub fn of(before_success: bool, after_success: bool) -> Self {
        match (before_success, after_success) {
            (false, true) => Category::Improvement,
            (true, false) => Category::Regression,
            (false, false) => Category::PersistentFailure,
            (true, true) => Category::StableSuccess,
        }
    }

    fn title(&self) -> &'static str {
        match self {
            Category::Regression => "Regressions",
            Category::PersistentFailure => "Persistent failures",
            Category::Improvement => "Improvements",
            Category::StableSuccess => "Stable successes",
        }
    }
}

/// The same task under the previous and current epoch-end skills.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparedTask {
    pub task_id: String,
    pub before: Trajectory,
    pub after: Trajectory,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Comparison {
    pub tasks: Vec<ComparedTask>,
}

impl Comparison {
    pub fn from_pairs(before: Vec<Trajectory>, after: Vec<Trajectory>) -> Self {
        let tasks = before
            .into_iter()
            .zip(after)
            .map(|(b, a)| ComparedTask {
                task_id: a.task_id.clone(),
                category: Category::of(b.success, a.success),
                before: b,
                after: a,
            })
            .collect();
        Self { tasks }
    }

    pub fn count(&self, category: Category) -> usize {
        self.tasks.iter().filter(|t| t.category == category).count()
    }

    pub fn render(&self, trace_cap: usize) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{COMPARISON_HEADER} ({} tasks)", self.tasks.len());
        for cat in [
            Category::Regression,
            Category::PersistentFailure,
            Category::Improvement,
            Category::StableSuccess,
        ] {
            let group: Vec<_> = self.tasks.iter().filter(|t| t.category == cat).collect();
            let _ = writeln!(out, "### {} ({})", cat.title(), group.len());
            for t in group {
                let _ = write!(
                    out,
                    "- task_id: {} | previous score {} | current score {}\n  current trace: {}\n",
                    t.task_id,
                    t.before.score,
                    t.after.score,
                    tail_chars(&t.after.trace, trace_cap).replace('\n', " / ")
                );
            }
        }
        out.push('\n');
        out
    }
}

pub fn slow_update_message(
    previous: &SkillDocument,
    current: &SkillDocument,
    comparison: &Comparison,
    previous_guidance: Option<&str>,
    trace_cap: usize,
) -> String {
    let mut out = String::new();
    // current first so extract_skill() finds it
    push_skill(&mut out, "Current Epoch Skill", current);
    let prev = format!("## Previous Epoch Skill\n```markdown\n{}\n```\n\n", previous.serialize());
    out.push_str(&prev);
    out.push_str(&comparison.render(trace_cap));
    let guidance = previous_guidance.filter(|g| !g.trim().is_empty()).unwrap_or("(none)");
    let _ = write!(out, "{GUIDANCE_HEADER}\n{guidance}\n");
    out
}

pub fn meta_message(
    previous: &SkillDocument,
    current: &SkillDocument,
    comparison: &Comparison,
    previous_memory: &str,
    trace_cap: usize,
) -> String {
    let mut out = String::new();
    push_skill(&mut out, "Current Epoch Last-Step Skill", current);
    let prev = format!("## Previous Epoch Last-Step Skill\n```markdown\n{}\n```\n\n", previous.serialize());
    out.push_str(&prev);
    out.push_str(&comparison.render(trace_cap));
    let memory = if previous_memory.trim().is_empty() { "(none)" } else { previous_memory.trim() };
    let _ = write!(out, "## Previous Optimizer Memory\n{memory}\n");
    out
}

/// One rejected step as remembered for the rest of the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedStep {
    pub edits: Vec<EditOp>,
    pub score_delta: f64,
    #[serde(default)]
    pub failure_patterns: Vec<String>,
}

/// Bullet digest of the most recent `cap` rejected edits, newest last.
pub fn buffer_digest(buffer: &[RejectedStep], cap: usize) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut patterns: Vec<&str> = Vec::new();
    for step in buffer {
        for edit in &step.edits {
            lines.push(format!(
                "- {} `{}` (selection score delta {:+.4})",
                edit.op,
                head_chars(edit.anchor_text(), 120).replace('\n', " "),
                step.score_delta
            ));
        }
        patterns.extend(step.failure_patterns.iter().map(String::as_str));
    }
    let start = lines.len().saturating_sub(cap);
    let mut out = lines[start..].join("\n");
    if !patterns.is_empty() {
        patterns.dedup();
        let _ = write!(out, "\nObserved failure patterns:\n");
        for p in patterns.iter().rev().take(cap).rev() {
            let _ = writeln!(out, "- {p}");
        }
    }
    out.trim_end().to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(id: &str, success: bool) -> Trajectory {
        Trajectory::new(id, format!("trace of {id}"), "ans".into(), if success { 1.0 } else { 0.0 }, 1.0)
    }

    #[test]
    fn skill_round_trips_through_message() {
        let skill = SkillDocument::from_body("# Skill\n- rule").unwrap();
        let msg = analyst_message("", &skill, &[traj("a", false)], 4, "", 100);
        assert_eq!(extract_skill(&msg), Some("# Skill\n- rule"));
        assert!(msg.contains("Produce at most 4 edits."));
        assert!(msg.contains("(none)"));
        assert!(!msg.contains(MEMORY_HEADER));
        let with_meta = analyst_message("prefer short rules", &skill, &[], 2, "", 100);
        assert!(with_meta.starts_with(MEMORY_HEADER));
    }

    #[test]
    fn trace_is_tail_truncated() {
        assert_eq!(tail_chars("abcdef", 3), "[... truncated ...]def");
        let mut out = String::new();
        let mut t = traj("a", false);
        t.trace = "x".repeat(50) + "END";
        render_trajectory(&mut out, 0, &t, 10);
        assert!(out.contains("xxxxxxxEND"));
        assert!(!out.contains(&"x".repeat(11)));
    }

    #[test]
    fn categories() {
        let c = Comparison::from_pairs(
            vec![traj("a", false), traj("b", true), traj("c", false), traj("d", true)],
            vec![traj("a", true), traj("b", false), traj("c", false), traj("d", true)],
        );
        assert_eq!(c.count(Category::Improvement), 1);
        assert_eq!(c.count(Category::Regression), 1);
        assert_eq!(c.count(Category::PersistentFailure), 1);
        assert_eq!(c.count(Category::StableSuccess), 1);
        assert!(c.render(50).contains("### Regressions (1)"));
    }

    #[test]
    fn digest_keeps_last_entries() {
        let step = |n: usize| RejectedStep {
            edits: (0..n).map(|i| EditOp::append(format!("rule {i} {}", "y".repeat(200)))).collect(),
            score_delta: -0.1,
            failure_patterns: vec!["format errors".into()],
        };
        let d = buffer_digest(&[step(15), step(10)], 20);
        assert_eq!(d.lines().filter(|l| l.starts_with("- append")).count(), 20);
        assert!(d.contains("-0.1000"));
        assert!(d.contains("Observed failure patterns:\n- format errors"));
        let first = d.lines().next().unwrap();
        assert!(first.len() < 200);
        assert_eq!(buffer_digest(&[], 20), "");
    }
}
