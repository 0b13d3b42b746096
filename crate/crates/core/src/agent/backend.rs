use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::ToolObservation;
use crate::domain::{SlotAnnotation, Specialist};
use crate::store::TableCaption;

use super::protocol::{AgentTask, Evidence};

/// Pipeline stage a backend call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Slu,
    Plan,
    Sufficiency,
    Finalize,
    Caption,
    Sql,
    Tool,
    Paraphrase,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Slu => "slu",
            Stage::Plan => "plan",
            Stage::Sufficiency => "sufficiency",
            Stage::Finalize => "finalize",
            Stage::Caption => "caption",
            Stage::Sql => "sql",
            Stage::Tool => "tool",
            Stage::Paraphrase => "paraphrase",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// Structured view of what the prompt text says. Remote backends only see
/// the text; deterministic backends read this instead of parsing prompts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageContext {
    pub question: String,
    pub intents: Vec<String>,
    pub slots: Vec<SlotAnnotation>,
    pub task: Option<AgentTask>,
    pub evidence: Vec<Evidence>,
    /// Specialists that have returned success so far, in order.
    pub completed: Vec<Specialist>,
    pub observations: Vec<ToolObservation>,
    pub caption: Option<TableCaption>,
    /// Error text from the previous attempt, if any.
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub stage: Stage,
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub context: StageContext,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("unavailable: {0}")]
    Unavailable(String),
}

/// Chat completion provider. Implementations must tolerate concurrent
/// independent calls.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

/// One backend exchange as recorded in an episode transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: Stage,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Issue one call with the given system prompt and user message, and log
/// it.
pub fn call_backend(
    backend: &dyn ChatBackend,
    stage: Stage,
    system: &str,
    user: String,
    context: StageContext,
    log: &mut Vec<CallRecord>,
) -> Result<String, BackendError> {
    let request = ChatRequest {
        stage,
        system: system.to_string(),
        messages: vec![ChatMessage::user(user)],
        context,
    };
    let out = backend.complete(&request);
    let prompt = request.messages.into_iter().next().map(|m| m.content).unwrap_or_default();
    log.push(CallRecord {
        stage,
        prompt,
        response: out.as_ref().ok().cloned(),
        error: out.as_ref().err().map(|e| e.to_string()),
    });
    out
}

/// OpenAI-style `chat/completions` client. The API key is read from the
/// named environment variable at call time.
#[derive(Debug)]
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key_env: Option<String>,
    temperature: f64,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint: &str, model: &str, api_key_env: Option<&str>, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key_env: api_key_env.map(String::from),
            temperature: 0.0,
            client,
        })
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut messages = vec![serde_json::json!({"role": "system", "content": request.system})];
        for m in &request.messages {
            messages.push(serde_json::json!({"role": m.role, "content": m.content}));
        }
        serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": messages,
        })
    }
}

/// Pull `choices[0].message.content` out of a chat-completion response.
pub fn parse_completion(body: &serde_json::Value) -> Result<String, BackendError> {
    body.pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(String::from)
        .ok_or_else(|| BackendError::Protocol("response lacks choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn name(&self) -> String {
        format!("http:{}@{}", self.model, self.endpoint)
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut req = self.client.post(&self.endpoint).json(&self.request_body(request));
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var).map_err(|_| BackendError::Unavailable(format!("environment variable {var} is not set")))?;
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let body: serde_json::Value = resp.json().map_err(|e| BackendError::Protocol(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Transport(format!("HTTP {status}: {body}")));
        }
        parse_completion(&body)
    }
}

/// Replays queued responses per stage; an empty queue yields the stage
/// default (or an error when there is none).
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<BTreeMap<Stage, VecDeque<String>>>,
    defaults: BTreeMap<Stage, String>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(self, stage: Stage, response: impl Into<String>) -> Self {
        self.queues
            .lock()
            .expect("script lock")
            .entry(stage)
            .or_default()
            .push_back(response.into());
        self
    }

    pub fn default_for(mut self, stage: Stage, response: impl Into<String>) -> Self {
        self.defaults.insert(stage, response.into());
        self
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if let Some(r) = self
            .queues
            .lock()
            .expect("script lock")
            .get_mut(&request.stage)
            .and_then(VecDeque::pop_front)
        {
            return Ok(r);
        }
        self.defaults
            .get(&request.stage)
            .cloned()
            .ok_or_else(|| BackendError::Unavailable(format!("no scripted response for stage {}", request.stage.as_str())))
    }
}

/// Fails every call.
#[derive(Debug, Clone, Default)]
pub struct ErrorBackend;

impl ChatBackend for ErrorBackend {
    fn name(&self) -> String {
        "always-error".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        Err(BackendError::Unavailable(format!("refusing {} call", request.stage.as_str())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_content_extraction() {
        let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(parse_completion(&body).unwrap(), "hi");
        assert!(parse_completion(&serde_json::json!({"error": "x"})).is_err());
    }

    #[test]
    fn http_body_has_system_first() {
        let b = HttpBackend::new("http://localhost:1/v1/chat/completions", "m", None, Duration::from_secs(1)).unwrap();
        let req = ChatRequest {
            stage: Stage::Plan,
            system: "sys".into(),
            messages: vec![ChatMessage::user("q")],
            context: StageContext::default(),
        };
        let body = b.request_body(&req);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "q");
        assert_eq!(body["model"], "m");
    }

    #[test]
    fn scripted_queue_then_default() {
        let s = ScriptedBackend::new().push(Stage::Plan, "a").default_for(Stage::Plan, "b");
        let req = ChatRequest {
            stage: Stage::Plan,
            system: String::new(),
            messages: vec![],
            context: StageContext::default(),
        };
        assert_eq!(s.complete(&req).unwrap(), "a");
        assert_eq!(s.complete(&req).unwrap(), "b");
        let req2 = ChatRequest { stage: Stage::Sql, ..req };
        assert!(s.complete(&req2).is_err());
    }
}
