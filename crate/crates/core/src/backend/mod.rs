//! Agent backends: one chat-completion-with-tools contract, implemented by a
//! deterministic oracle, scripted fault profiles, a remote HTTP adapter and a
//! replayer for recorded runs.

mod oracle;
mod profile;
mod remote;
mod replay;
mod scripted;

use std::fmt;
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use oracle::{expert_bundles, OracleBackend, EXPERT_PRODUCTS};
pub use profile::{benchmark_profiles, AgentProfile, Fault, ProfileError, ScriptItem, FABRICATED_PRODUCTS};
pub use remote::{parse_completion, RemoteBackend, RemoteConfig};
pub use replay::{BackendCallRecord, RecordedOutcome, RecordingBackend, ReplayBackend};
pub use scripted::ScriptedBackend;

use crate::catalog::Catalog;
use crate::clock::ManualClock;
use crate::dialogue::{IntentContract, Stage};
use crate::gateway::{OrderPayload, ToolDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// A tool call as requested by a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RequestedCall {
    pub call_id: String,
    pub tool_name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<RequestedCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_result_for: Option<String>,
    /// Set when the backend tried to call a tool but the call was malformed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_failure: Option<String>,
}

impl ChatTurn {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into(), tool_calls: Vec::new(), tool_result_for: None, parse_failure: None }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_calls(content: impl Into<String>, calls: Vec<RequestedCall>) -> Self {
        Self { tool_calls: calls, ..Self::plain(Role::Assistant, content) }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self { tool_result_for: Some(call_id.into()), ..Self::plain(Role::Tool, content) }
    }
}

/// Everything a backend sees for one completion.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub session_id: &'a str,
    pub stage: Stage,
    pub history: &'a [ChatTurn],
    pub tools: &'a [ToolDescriptor],
    pub contract: &'a IntentContract,
    pub draft: Option<&'a OrderPayload>,
    pub timeout: Duration,
}

impl CompletionRequest<'_> {
    pub fn validate(&self) -> Result<(), BackendError> {
        match self.history.first() {
            Some(t) if t.role == Role::System => Ok(()),
            Some(_) => Err(BackendError::InvalidRequest("history must start with a system turn".into())),
            None => Err(BackendError::InvalidRequest("empty history".into())),
        }
    }

    /// Assistant turns since the most recent user turn.
    pub fn step(&self) -> usize {
        self.history.iter().rev().take_while(|t| t.role != Role::User).filter(|t| t.role == Role::Assistant).count()
    }

    pub fn last_user_text(&self) -> &str {
        self.history.iter().rev().find(|t| t.role == Role::User).map(|t| t.content.as_str()).unwrap_or_default()
    }

    /// Tool turns since the most recent user turn.
    pub fn recent_tool_results(&self) -> impl Iterator<Item = &ChatTurn> {
        let start = self.history.iter().rposition(|t| t.role == Role::User).map_or(0, |i| i + 1);
        self.history[start..].iter().filter(|t| t.role == Role::Tool)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend does not support tool calling")]
    ToolCallingUnsupported,
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait AgentBackend: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ChatTurn, BackendError>;
}

static TOOLISH: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"(?i)<\s*/?\s*(?:tool_call|function_call|function|tool)\b|"(?:name|tool|function|tool_name)"\s*:\s*"(?:catalog[._](?:search|get|decompose)|cost[._]quote|order[._]place)"|\b(?:catalog[._](?:search|get|decompose)|cost[._]quote|order[._]place)\s*\("#,
    )
    .expect("tool-text pattern")
});

/// True when free text contains what looks like an attempted tool call.
pub fn looks_like_tool_call(text: &str) -> bool {
    TOOLISH.is_match(text)
}

/// Wraps free assistant text, annotating it when it carries a tool call that
/// never made it into structured form.
pub fn classify_text(content: impl Into<String>) -> ChatTurn {
    let content = content.into();
    let mut turn = ChatTurn::assistant(content);
    if looks_like_tool_call(&turn.content) {
        turn.parse_failure = Some("tool call emitted as text".into());
    }
    turn
}

/// Which backend to run, as named on the command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", rename_all_fields = "camelCase", tag = "kind")]
pub enum BackendSpec {
    Oracle,
    Scripted { profile: String },
    Remote { endpoint_url: String, model_name: String, api_key_env: Option<String> },
}

impl BackendSpec {
    /// Parses `oracle`, `scripted:<profile>` or `remote:<url>,<model>`.
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "oracle" {
            return Ok(BackendSpec::Oracle);
        }
        if let Some(p) = s.strip_prefix("scripted:") {
            if p.is_empty() {
                return Err("scripted backend needs a profile name".into());
            }
            return Ok(BackendSpec::Scripted { profile: p.into() });
        }
        if let Some(rest) = s.strip_prefix("remote:") {
            let (url, model) = rest.rsplit_once(',').ok_or("remote backend needs `<url>,<model>`")?;
            if url.is_empty() || model.is_empty() {
                return Err("remote backend needs both an endpoint url and a model name".into());
            }
            return Ok(BackendSpec::Remote { endpoint_url: url.into(), model_name: model.into(), api_key_env: None });
        }
        Err(format!("unknown backend `{s}`; expected oracle, scripted:<profile> or remote:<url>,<model>"))
    }

    /// Builds the backend. Scripted profiles advance `clock` when given.
    pub fn build(
        &self,
        catalog: Arc<Catalog>,
        clock: Option<Arc<ManualClock>>,
    ) -> Result<Box<dyn AgentBackend>, String> {
        match self {
            BackendSpec::Oracle => Ok(Box::new(OracleBackend::new(catalog))),
            BackendSpec::Scripted { profile } => {
                let p = AgentProfile::by_name(profile).ok_or_else(|| {
                    let known: Vec<String> = benchmark_profiles().into_iter().map(|p| p.name).collect();
                    format!("unknown profile `{profile}`; known: {}", known.join(", "))
                })?;
                Ok(Box::new(ScriptedBackend::new(p, catalog, clock).map_err(|e| e.to_string())?))
            }
            BackendSpec::Remote { endpoint_url, model_name, api_key_env } => {
                let api_key = api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
                let cfg = RemoteConfig { endpoint_url: endpoint_url.clone(), model_name: model_name.clone(), api_key };
                Ok(Box::new(RemoteBackend::new(cfg).map_err(|e| e.to_string())?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tool_text_detection() {
        assert!(looks_like_tool_call(r#"<tool_call>{"name": "catalog.search", "arguments": {</tool_call>"#));
        assert!(looks_like_tool_call(r#"{"name": "catalog_get", "arguments": {}}"#));
        assert!(looks_like_tool_call("calling cost.quote(items=[...])"));
        assert!(!looks_like_tool_call(r#"{"name": "On-demand Network Slice", "tier": "Gold"}"#));
        assert!(!looks_like_tool_call("The total is 7,800€. Please confirm."));
        assert!(classify_text("<function=catalog.search>").parse_failure.is_some());
    }

    #[test]
    fn backend_spec_parsing() {
        assert_eq!(BackendSpec::parse("oracle"), Ok(BackendSpec::Oracle));
        assert_eq!(BackendSpec::parse("scripted:granite3.1-moe:3b"), Ok(BackendSpec::Scripted { profile: "granite3.1-moe:3b".into() }));
        assert_eq!(
            BackendSpec::parse("remote:http://localhost:11434,qwen3:32b"),
            Ok(BackendSpec::Remote { endpoint_url: "http://localhost:11434".into(), model_name: "qwen3:32b".into(), api_key_env: None })
        );
        assert!(BackendSpec::parse("remote:nomodel").is_err());
        assert!(BackendSpec::parse("gpt").is_err());
    }
}
