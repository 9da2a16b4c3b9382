use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};

/// One canned response. `match` restricts the entry to requests whose last
/// user message contains the given substring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub match_text: Option<String>,
    pub content: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

impl ScriptEntry {
    pub fn new(content: impl Into<String>) -> Self {
        Self {
            match_text: None,
            content: content.into(),
            prompt_tokens: 0,
            completion_tokens: 0,
        }
    }

    pub fn with_match(mut self, needle: impl Into<String>) -> Self {
        self.match_text = Some(needle.into());
        self
    }

    pub fn with_usage(mut self, prompt_tokens: u64, completion_tokens: u64) -> Self {
        self.prompt_tokens = prompt_tokens;
        self.completion_tokens = completion_tokens;
        self
    }
}

/// Replays a script: each call consumes the first unused entry whose filter
/// matches.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    used: Mutex<Vec<bool>>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let used = Mutex::new(vec![false; entries.len()]);
        Self { entries, used }
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let entries: Vec<ScriptEntry> = serde_json::from_str(text)
            .map_err(|e| BackendError::Config(format!("bad script: {e}")))?;
        Ok(Self::new(entries))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read script {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn remaining(&self) -> usize {
        self.used.lock().expect("script lock").iter().filter(|u| !**u).count()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let last_user = req.last_user();
        let mut used = self.used.lock().expect("script lock");
        let pick = self.entries.iter().enumerate().position(|(i, e)| {
            !used[i] && e.match_text.as_deref().is_none_or(|m| last_user.contains(m))
        });
        let Some(i) = pick else {
            return Err(BackendError::ScriptExhausted);
        };
        used[i] = true;
        let entry = &self.entries[i];
        Ok(ChatResponse {
            content: entry.content.clone(),
            usage: Usage {
                prompt_tokens: entry.prompt_tokens,
                completion_tokens: entry.completion_tokens,
            },
            latency_ms: 0.0,
        })
    }

    fn sequential(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Message;

    #[test]
    fn match_filter_skips_entries() {
        let b = ScriptedBackend::from_json(
            r#"[{"match":"rank","content":"R"},{"content":"any","prompt_tokens":4}]"#,
        )
        .unwrap();
        let ask = |t: &str| ChatRequest::new("m", vec![Message::user(t)]);
        assert_eq!(b.complete(&ask("analyse")).unwrap().content, "any");
        assert_eq!(b.complete(&ask("please rank")).unwrap().content, "R");
        assert_eq!(b.complete(&ask("x")), Err(BackendError::ScriptExhausted));
    }
}
