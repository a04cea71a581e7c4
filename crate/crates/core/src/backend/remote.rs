//! Adapter for OpenAI-compatible `/v1/chat/completions` endpoints, as served
//! by local model servers.
//!
//! Tool names are sent with `.` replaced by `_` (`catalog.search` becomes
//! `catalog_search`) since many servers reject dots in function names; the
//! mapping is reversed on the way back. Requests are non-streaming.

use std::time::Duration;

use serde_json::{json, Value};

use super::{classify_text, AgentBackend, BackendError, ChatTurn, CompletionRequest, RequestedCall, Role};
use crate::gateway::{ToolDescriptor, ToolName};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteConfig {
    /// Base url (`http://host:11434`) or a full `.../chat/completions` url.
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key: Option<String>,
}

#[derive(Debug)]
pub struct RemoteBackend {
    config: RemoteConfig,
    url: String,
    client: reqwest::blocking::Client,
}

fn wire_name(tool: &str) -> String {
    tool.replace('.', "_")
}

fn internal_name(wire: &str) -> String {
    ToolName::ALL
        .iter()
        .find(|t| wire_name(t.as_str()) == wire || t.as_str() == wire)
        .map(|t| t.as_str().to_owned())
        .unwrap_or_else(|| wire.to_owned())
}

fn message(turn: &ChatTurn) -> Value {
    match turn.role {
        Role::Tool => json!({
            "role": "tool",
            "content": turn.content,
            "tool_call_id": turn.tool_result_for,
        }),
        Role::Assistant if !turn.tool_calls.is_empty() => {
            let calls: Vec<Value> = turn
                .tool_calls
                .iter()
                .map(|c| {
                    json!({
                        "id": c.call_id,
                        "type": "function",
                        "function": { "name": wire_name(&c.tool_name), "arguments": c.arguments.to_string() },
                    })
                })
                .collect();
            json!({ "role": "assistant", "content": turn.content, "tool_calls": calls })
        }
        role => json!({ "role": role, "content": turn.content }),
    }
}

pub(crate) fn request_body(model: &str, history: &[ChatTurn], tools: &[ToolDescriptor]) -> Value {
    let tools: Vec<Value> = tools
        .iter()
        .map(|t| {
            json!({
                "type": "function",
                "function": {
                    "name": wire_name(t.name.as_str()),
                    "description": t.description,
                    "parameters": t.parameters_schema(),
                },
            })
        })
        .collect();
    json!({
        "model": model,
        "messages": history.iter().map(message).collect::<Vec<_>>(),
        "tools": tools,
        "stream": false,
        "temperature": 0,
    })
}

/// Turns a response body into a chat turn or a classified error. Never
/// panics, whatever the bytes.
pub fn parse_completion(body: &[u8]) -> Result<ChatTurn, BackendError> {
    let v: Value = serde_json::from_slice(body).map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))?;
    if let Some(err) = v.get("error") {
        let text = err.get("message").and_then(Value::as_str).map(str::to_owned).unwrap_or_else(|| err.to_string());
        if text.to_lowercase().contains("does not support tools") {
            return Err(BackendError::ToolCallingUnsupported);
        }
        return Err(BackendError::Protocol(text));
    }
    let msg = v
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::Protocol("response has no choices[0].message".into()))?;
    let content = match msg.get("content") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(BackendError::Protocol(format!("unexpected content type: {other}"))),
    };
    let raw_calls = match msg.get("tool_calls") {
        None | Some(Value::Null) => return Ok(classify_text(content)),
        Some(Value::Array(a)) if a.is_empty() => return Ok(classify_text(content)),
        Some(Value::Array(a)) => a,
        Some(_) => {
            let mut t = ChatTurn::assistant(content);
            t.parse_failure = Some("tool_calls is not a list".into());
            return Ok(t);
        }
    };

    let mut calls = Vec::with_capacity(raw_calls.len());
    let mut problem = None;
    for (i, c) in raw_calls.iter().enumerate() {
        let name = c.pointer("/function/name").and_then(Value::as_str);
        let args = match c.pointer("/function/arguments") {
            Some(Value::String(s)) if s.trim().is_empty() => Some(json!({})),
            Some(Value::String(s)) => serde_json::from_str::<Value>(s).ok().filter(Value::is_object),
            Some(o @ Value::Object(_)) => Some(o.clone()),
            None | Some(Value::Null) => Some(json!({})),
            Some(_) => None,
        };
        match (name, args) {
            (Some(n), Some(arguments)) if !n.is_empty() => calls.push(RequestedCall {
                call_id: c.get("id").and_then(Value::as_str).map(str::to_owned).unwrap_or_else(|| format!("call-{i}")),
                tool_name: internal_name(n),
                arguments,
            }),
            _ => problem = Some(format!("tool call {i} is malformed")),
        }
    }
    if let Some(p) = problem {
        let mut t = ChatTurn::assistant(content);
        t.parse_failure = Some(p);
        return Ok(t);
    }
    Ok(ChatTurn::assistant_calls(content, calls))
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        if config.endpoint_url.is_empty() || config.model_name.is_empty() {
            return Err(BackendError::InvalidRequest("remote backend needs an endpoint url and a model name".into()));
        }
        let base = config.endpoint_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_owned()
        } else if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        };
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { config, url, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn send(&self, body: &Value, timeout: Duration) -> Result<Vec<u8>, BackendError> {
        let mut req = self.client.post(&self.url).timeout(timeout).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(timeout)
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(timeout)
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        if !status.is_success() {
            let text = String::from_utf8_lossy(&bytes);
            if text.to_lowercase().contains("does not support tools") {
                return Err(BackendError::ToolCallingUnsupported);
            }
            let excerpt: String = text.chars().take(200).collect();
            return Err(BackendError::Transport(format!("HTTP {status}: {excerpt}")));
        }
        Ok(bytes.to_vec())
    }
}

impl AgentBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.config.model_name
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<ChatTurn, BackendError> {
        req.validate()?;
        let body = request_body(&self.config.model_name, req.history, req.tools);
        let bytes = self.send(&body, req.timeout)?;
        parse_completion(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::list_tools;
    use proptest::prelude::*;

    #[test]
    fn request_maps_tool_names_and_roles() {
        let history = vec![
            ChatTurn::system("rules"),
            ChatTurn::user("hi"),
            ChatTurn::assistant_calls("", vec![RequestedCall { call_id: "a".into(), tool_name: "catalog.search".into(), arguments: json!({ "keywords": ["slice"] }) }]),
            ChatTurn::tool("a", "{}"),
        ];
        let body = request_body("m", &history, &list_tools());
        assert_eq!(body["tools"].as_array().unwrap().len(), 5);
        assert_eq!(body["tools"][0]["function"]["name"], "catalog_search");
        assert_eq!(body["messages"][2]["tool_calls"][0]["function"]["name"], "catalog_search");
        assert_eq!(body["messages"][2]["tool_calls"][0]["function"]["arguments"], r#"{"keywords":["slice"]}"#);
        assert_eq!(body["messages"][3]["tool_call_id"], "a");
        assert_eq!(body["messages"][0]["role"], "system");
    }

    #[test]
    fn parses_structured_calls() {
        let body = br#"{"choices":[{"message":{"role":"assistant","content":null,"tool_calls":[
            {"id":"c1","type":"function","function":{"name":"catalog_get","arguments":"{\"name\":\"Service APIs Exposure\"}"}}]}}]}"#;
        let t = parse_completion(body).unwrap();
        assert_eq!(t.tool_calls[0].tool_name, "catalog.get");
        assert_eq!(t.tool_calls[0].arguments["name"], "Service APIs Exposure");
        assert!(t.parse_failure.is_none());
    }

    #[test]
    fn classifies_failures() {
        let bad_args = br#"{"choices":[{"message":{"content":"","tool_calls":[{"id":"x","function":{"name":"catalog_get","arguments":"{oops"}}]}}]}"#;
        assert!(parse_completion(bad_args).unwrap().parse_failure.is_some());
        let text_call = br#"{"choices":[{"message":{"content":"<tool_call>{\"name\": \"catalog.search\"}</tool_call>"}}]}"#;
        assert!(parse_completion(text_call).unwrap().parse_failure.is_some());
        assert!(matches!(parse_completion(b"not json"), Err(BackendError::Protocol(_))));
        assert!(matches!(parse_completion(br#"{"choices":[]}"#), Err(BackendError::Protocol(_))));
        assert_eq!(
            parse_completion(br#"{"error":{"message":"registry.ollama.ai/library/deepseek-r1 does not support tools"}}"#),
            Err(BackendError::ToolCallingUnsupported)
        );
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let b = RemoteBackend::new(RemoteConfig { endpoint_url: "http://127.0.0.1:9".into(), model_name: "m".into(), api_key: None }).unwrap();
        assert_eq!(b.url(), "http://127.0.0.1:9/v1/chat/completions");
        let history = [ChatTurn::system("s"), ChatTurn::user("u")];
        let contract = crate::dialogue::IntentContract::draft("u");
        let req = CompletionRequest {
            session_id: "s",
            stage: crate::dialogue::Stage::Ingestion,
            history: &history,
            tools: &[],
            contract: &contract,
            draft: None,
            timeout: Duration::from_secs(2),
        };
        assert!(matches!(b.complete(&req), Err(BackendError::Transport(_) | BackendError::Timeout(_))));
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let _ = parse_completion(&bytes);
        }

        #[test]
        fn arbitrary_json_shapes_never_panic(content in ".{0,64}", name in "[a-z_.]{0,16}", args in ".{0,32}") {
            let body = json!({ "choices": [{ "message": { "content": content, "tool_calls": [{ "id": 1, "function": { "name": name, "arguments": args } }] } }] });
            let _ = parse_completion(body.to_string().as_bytes());
        }
    }
}
