use std::collections::HashMap;

use crate::backend::{approx_tokens, BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};

use super::{RuleTask, FAILED, SOLVED};

/// A simulated target model for simbench tasks: it reads the task id from the
/// user message and answers `solved` exactly when the system prompt satisfies
/// that task's rule. Lets the chat harness reproduce simbench scores.
#[derive(Debug, Clone)]
pub struct SimTargetBackend {
    tasks: HashMap<String, RuleTask>,
}

impl SimTargetBackend {
    pub fn new(tasks: impl IntoIterator<Item = RuleTask>) -> Self {
        Self { tasks: tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect() }
    }

    fn task_for(&self, user: &str) -> Option<&RuleTask> {
        let rest = user.trim_start().strip_prefix("Task ")?;
        let id = rest.split(':').next()?;
        self.tasks.get(id)
    }
}

impl ChatBackend for SimTargetBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let user = req.last_user();
        let task = self
            .task_for(user)
            .ok_or_else(|| BackendError::Config(format!("no simbench task named in prompt {user:?}")))?;
        let answer = if task.score_text(req.system()) == 1.0 { SOLVED } else { FAILED };
        let content = format!("Checked rule {}.\nAnswer: {answer}", task.required_token);
        let usage = Usage {
            prompt_tokens: req.messages.iter().map(|m| approx_tokens(&m.content)).sum(),
            completion_tokens: approx_tokens(&content),
        };
        Ok(ChatResponse { content, usage, latency_ms: 0.0 })
    }
}
