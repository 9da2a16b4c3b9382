use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ureq::Agent;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> u64 {
    600
}

/// OpenAI-compatible chat-completions over HTTP.
pub struct LiveBackend {
    agent: Agent,
    url: String,
    api_key: Option<String>,
}

impl LiveBackend {
    pub fn new(config: &LiveConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env).ok();
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
        })
    }

    fn body(req: &ChatRequest) -> Value {
        let mut body = json!({
            "model": req.model_id,
            "messages": req.messages,
            "reasoning_effort": req.reasoning_effort.as_str(),
        });
        if let Some(max) = req.max_output_tokens {
            body["max_completion_tokens"] = json!(max);
        }
        body
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let started = Instant::now();
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(Self::body(req))
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(BackendError::Transient(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(BackendError::Transport { attempts: 1, message: format!("HTTP {status}: {text}") });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Transient(format!("bad response body: {e}")))?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        let usage = Usage {
            prompt_tokens: value["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: value["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(ChatResponse {
            content,
            usage,
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Message;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serves `responses` in order, one per connection, returning the request
    /// bodies it saw.
    fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (format!("http://{addr}"), handle)
    }

    #[test]
    fn speaks_chat_completions() {
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"prompt_tokens":12,"completion_tokens":2}}"#;
        let (url, server) = serve(vec![(503, "{}".into()), (200, reply.into())]);
        let backend = LiveBackend::new(&LiveConfig {
            base_url: url,
            api_key_env: "SKILLTUNE_TEST_UNSET_KEY".into(),
            timeout_secs: 5,
        })
        .unwrap();
        let req = ChatRequest::new("model-x", vec![Message::system("s"), Message::user("u")]);
        assert!(matches!(backend.complete(&req), Err(BackendError::Transient(_))));
        let resp = backend.complete(&req).unwrap();
        assert_eq!(resp.content, "hi");
        assert_eq!(resp.usage, Usage { prompt_tokens: 12, completion_tokens: 2 });
        let bodies = server.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["model"], "model-x");
        assert_eq!(sent["reasoning_effort"], "medium");
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["messages"][1]["content"], "u");
    }
}
