use crate::backend::{Client, Message, Phase};
use crate::dataset::Task;
use crate::skilldoc::SkillDocument;

use super::{Harness, Scorer, Trajectory};

const SKILL_SEPARATOR: &str = "\n\n---\n\n";

/// Single chat completion with the skill prepended to the system prompt.
pub struct DirectChatHarness {
    target: Client,
    scorer: Scorer,
    base_system_prompt: String,
    answer_marker: Option<String>,
    success_threshold: f64,
}

impl DirectChatHarness {
    pub fn new(target: Client, scorer: Scorer) -> Self {
        Self {
            target,
            scorer,
            base_system_prompt: String::new(),
            answer_marker: None,
            success_threshold: 1.0,
        }
    }

    pub fn with_base_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.base_system_prompt = prompt.into();
        self
    }

    pub fn with_answer_marker(mut self, marker: Option<String>) -> Self {
        self.answer_marker = marker.filter(|m| !m.is_empty());
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.success_threshold = threshold;
        self
    }

    pub fn system_prompt(&self, skill: &SkillDocument) -> String {
        match (skill.is_empty(), self.base_system_prompt.is_empty()) {
            (true, _) => self.base_system_prompt.clone(),
            (false, true) => skill.serialize().to_owned(),
            (false, false) => format!("{}{SKILL_SEPARATOR}{}", skill.serialize(), self.base_system_prompt),
        }
    }

    /// Whole completion, or the first line after the last answer marker.
    pub fn extract_answer(&self, completion: &str) -> String {
        let Some(marker) = &self.answer_marker else {
            return completion.trim().to_owned();
        };
        match completion.rfind(marker.as_str()) {
            Some(at) => completion[at + marker.len()..]
                .trim()
                .lines()
                .next()
                .unwrap_or_default()
                .trim()
                .to_owned(),
            None => completion.trim().to_owned(),
        }
    }
}

impl Harness for DirectChatHarness {
    fn kind(&self) -> &'static str {
        "direct_chat"
    }

    fn run_task(&self, task: &Task, skill: &SkillDocument, phase: Phase) -> Trajectory {
        let prompt = task.prompt();
        let req = self.target.request(vec![
            Message::system(self.system_prompt(skill)),
            Message::user(prompt.clone()),
        ]);
        match self.target.complete(phase, &req) {
            Ok(resp) => {
                let answer = self.extract_answer(&resp.content);
                let score = self.scorer.score(&answer, &task.reference_text());
                let trace = format!("[user]\n{prompt}\n[assistant]\n{}", resp.content);
                Trajectory::new(&task.task_id, trace, answer, score, self.success_threshold)
            }
            Err(e) => Trajectory::fault(&task.task_id, e.to_string(), self.success_threshold),
        }
    }

    fn sequential(&self) -> bool {
        self.target.sequential()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptEntry, ScriptedBackend, UsageLedger};
    use serde_json::json;
    use std::sync::Arc;

    fn harness(entries: Vec<ScriptEntry>) -> DirectChatHarness {
        let client = Client::new(
            Arc::new(ScriptedBackend::new(entries)),
            Arc::new(UsageLedger::default()),
            "target",
        );
        DirectChatHarness::new(client, Scorer::ExactMatch)
            .with_base_prompt("Answer briefly.")
            .with_answer_marker(Some("Answer:".into()))
    }

    fn task() -> Task {
        Task { task_id: "q1".into(), payload: json!({"prompt": "Capital of France?"}), reference: json!("Paris") }
    }

    #[test]
    fn exact_answer_scores_one() {
        let h = harness(vec![ScriptEntry::new("Thinking...\nAnswer: Paris")]);
        let t = h.run_task(&task(), &SkillDocument::from_body("Be terse.").unwrap(), Phase::Rollout);
        assert_eq!((t.score, t.success), (1.0, true));
        assert_eq!(t.final_answer, "Paris");
    }

    #[test]
    fn skill_goes_first_in_system_prompt() {
        let h = harness(vec![]);
        let skill = SkillDocument::from_body("RULES").unwrap();
        assert_eq!(h.system_prompt(&skill), "RULES\n\n---\n\nAnswer briefly.");
        assert_eq!(h.system_prompt(&SkillDocument::empty()), "Answer briefly.");
    }

    #[test]
    fn backend_failure_scores_zero() {
        let h = harness(vec![]);
        let t = h.run_task(&task(), &SkillDocument::empty(), Phase::Rollout);
        assert_eq!(t.score, 0.0);
        assert!(t.trace.contains("harness fault"));
    }
}
