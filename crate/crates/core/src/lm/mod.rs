//! Language-model access.
//!
//! The engine hands every composed prompt to an [`LmBackend`] as an
//! [`LmRequest`] and gets raw completion text back. Two backends ship here:
//! [`ScriptedBackend`] for deterministic runs and [`HttpBackend`] for any
//! chat-completions compatible endpoint.

mod http;
mod scripted;

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use scripted::{Matcher, ScriptEntry, ScriptedBackend};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::prompt::ComposedPrompt;
use crate::utterance::Role;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("no script entry matches request #{index} (system part starts with {excerpt:?})")]
    ScriptMiss { index: u64, excerpt: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion body: {0}")]
    Malformed(String),
}

/// Roles on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    Assistant,
    User,
}

impl From<Role> for ChatRole {
    fn from(role: Role) -> Self {
        match role {
            Role::Agent => ChatRole::Assistant,
            Role::User => ChatRole::User,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f32,
    pub max_output: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: ChatRole,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub system_part: String,
    pub turns: Vec<Turn>,
    pub decode_params: DecodeParams,
}

impl LmRequest {
    pub fn from_composed(prompt: &ComposedPrompt, decode_params: DecodeParams) -> Self {
        Self {
            system_part: prompt.system_part.clone(),
            turns: prompt
                .conversation_part
                .iter()
                .map(|u| Turn {
                    role: u.role.into(),
                    content: u.content.clone(),
                })
                .collect(),
            decode_params,
        }
    }
}

pub trait LmBackend: Send + Sync {
    fn complete(&self, request: &LmRequest) -> Result<String, LmError>;
}

impl<T: LmBackend + ?Sized> LmBackend for std::sync::Arc<T> {
    fn complete(&self, request: &LmRequest) -> Result<String, LmError> {
        (**self).complete(request)
    }
}

/// Chat-completions request body: a leading system message followed by the
/// turns, with decode parameters copied through.
pub fn serialize_chat(request: &LmRequest) -> Value {
    let mut messages = Vec::with_capacity(request.turns.len() + 1);
    messages.push(json!({ "role": ChatRole::System, "content": request.system_part }));
    messages.extend(
        request
            .turns
            .iter()
            .map(|t| json!({ "role": t.role, "content": t.content })),
    );
    json!({
        "messages": messages,
        "temperature": request.decode_params.temperature,
        "max_tokens": request.decode_params.max_output,
    })
}

/// Inverse of [`serialize_chat`]; used by stub servers replaying scripts.
pub fn deserialize_chat(body: &Value) -> Result<LmRequest, LmError> {
    let malformed = |what: &str| LmError::Malformed(what.to_owned());
    let messages = body
        .get("messages")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing messages array"))?;
    let (first, rest) = messages
        .split_first()
        .ok_or_else(|| malformed("empty messages array"))?;
    let system: Turn =
        serde_json::from_value(first.clone()).map_err(|e| LmError::Malformed(e.to_string()))?;
    if system.role != ChatRole::System {
        return Err(malformed("first message is not a system message"));
    }
    let turns = rest
        .iter()
        .map(|m| serde_json::from_value(m.clone()).map_err(|e| LmError::Malformed(e.to_string())))
        .collect::<Result<Vec<Turn>, _>>()?;
    let defaults = DecodeParams::default();
    Ok(LmRequest {
        system_part: system.content,
        turns,
        decode_params: DecodeParams {
            temperature: body
                .get("temperature")
                .and_then(Value::as_f64)
                .map_or(defaults.temperature, |t| t as f32),
            max_output: body
                .get("max_tokens")
                .and_then(Value::as_u64)
                .map_or(defaults.max_output, |m| m as u32),
        },
    })
}

/// Pulls `choices[0].message.content` out of a chat-completions response.
pub fn parse_completion(body: &Value) -> Result<String, LmError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| LmError::Malformed("missing choices[0].message.content".into()))
}
