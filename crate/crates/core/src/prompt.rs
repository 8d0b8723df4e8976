//! Prompt templates and composition of the prompts sent to the language model.
//!
//! States, decisions and actions each carry a small template. At runtime the
//! templates are rendered against the interaction storage and concatenated,
//! outermost first, into a [`ComposedPrompt`]: an instruction part plus the
//! slice of conversation the model should look at.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::storage::InteractionStorage;
use crate::utterance::Utterance;

/// Joins instruction fragments.
pub const FRAGMENT_SEPARATOR: &str = "\n";

/// Appended to every decision prompt so the completion can be read as a boolean.
pub const DECISION_DIRECTIVE: &str =
    "Answer with exactly one word: YES if the condition holds, NO otherwise.";

/// Appended to the state prompt chain when a transition reaches a final node.
pub const CLOSING_DIRECTIVE: &str =
    "The conversation is now complete. Compose a single, short closing message to the user.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("no value stored for placeholder `{0}`")]
    MissingPlaceholderValue(String),
    #[error("unknown placeholder filter `{filter}` on `{key}`")]
    UnknownFilter { key: String, filter: String },
    #[error("value of `{key}` cannot be rendered as a list: {reason}")]
    NotAList { key: String, reason: String },
}

/// Formatting applied to a stored value when it is substituted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filter {
    /// Value used verbatim.
    Raw,
    /// Value is a JSON array of strings, rendered as `- item` lines.
    Bullets,
}

impl Filter {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "bullets" => Some(Filter::Bullets),
            _ => None,
        }
    }
}

/// A `{key}` or `{key|filter}` occurrence inside a template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placeholder {
    pub key: String,
    pub filter: Filter,
    /// Byte range of the whole `{...}` token in the template text.
    pub span: std::ops::Range<usize>,
}

fn is_key_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')
}

/// Scans `text` for placeholder tokens. A brace that does not open a
/// well-formed token is literal text, so JSON snippets inside prompts survive.
fn scan(text: &str) -> Vec<(usize, usize, &str, Option<&str>)> {
    let mut found = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        let Some(close) = text[i + 1..].find(['{', '}']).map(|off| i + 1 + off) else {
            break;
        };
        if bytes[close] == b'{' {
            i = close;
            continue;
        }
        let inner = &text[i + 1..close];
        let (key, filter) = match inner.split_once('|') {
            Some((k, f)) => (k, Some(f)),
            None => (inner, None),
        };
        let key_ok = !key.is_empty() && key.chars().all(is_key_char);
        let filter_ok = filter.is_none_or(|f| {
            !f.is_empty() && f.chars().all(|c| c.is_ascii_lowercase() || c == '_')
        });
        if key_ok && filter_ok {
            found.push((i, close + 1, key, filter));
            i = close + 1;
        } else {
            i += 1;
        }
    }
    found
}

/// Template text with `{key}` placeholders filled from storage at runtime.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, TemplateError> {
        let text = text.into();
        for (_, _, key, filter) in scan(&text) {
            if let Some(name) = filter {
                if Filter::parse(name).is_none() {
                    return Err(TemplateError::UnknownFilter {
                        key: key.to_owned(),
                        filter: name.to_owned(),
                    });
                }
            }
        }
        Ok(Self { text })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn placeholders(&self) -> Vec<Placeholder> {
        scan(&self.text)
            .into_iter()
            .map(|(start, end, key, filter)| Placeholder {
                key: key.to_owned(),
                // unknown filters are rejected in `new`
                filter: filter.and_then(Filter::parse).unwrap_or(Filter::Raw),
                span: start..end,
            })
            .collect()
    }

    /// Substitutes every placeholder in a single left-to-right pass. Values
    /// are never re-scanned, so rendering always terminates.
    pub fn render(&self, storage: &InteractionStorage) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len());
        let mut cursor = 0;
        for ph in self.placeholders() {
            out.push_str(&self.text[cursor..ph.span.start]);
            let value = storage
                .get(&ph.key)
                .ok_or_else(|| TemplateError::MissingPlaceholderValue(ph.key.clone()))?;
            match ph.filter {
                Filter::Raw => out.push_str(value),
                Filter::Bullets => out.push_str(&bullet_list(&ph.key, value)?),
            }
            cursor = ph.span.end;
        }
        out.push_str(&self.text[cursor..]);
        Ok(out)
    }
}

fn bullet_list(key: &str, value: &str) -> Result<String, TemplateError> {
    let items: Vec<String> =
        serde_json::from_str(value).map_err(|e| TemplateError::NotAList {
            key: key.to_owned(),
            reason: e.to_string(),
        })?;
    Ok(items
        .iter()
        .map(|item| format!("- {item}"))
        .collect::<Vec<_>>()
        .join("\n"))
}

impl TryFrom<String> for PromptTemplate {
    type Error = TemplateError;

    fn try_from(text: String) -> Result<Self, Self::Error> {
        Self::new(text)
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> Self {
        t.text
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Renders `template` against `storage`.
pub fn render_template(
    template: &PromptTemplate,
    storage: &InteractionStorage,
) -> Result<String, TemplateError> {
    template.render(storage)
}

/// The instruction part and conversation slice handed to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedPrompt {
    pub system_part: String,
    pub conversation_part: Vec<Utterance>,
}

fn join<S: AsRef<str>>(fragments: &[S]) -> String {
    fragments
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(FRAGMENT_SEPARATOR)
}

/// State prompt chain extended by the starter prompt; no conversation yet.
pub fn compose_starter<S: AsRef<str>>(state_prompt_chain: &[S], starter_prompt: &str) -> ComposedPrompt {
    let mut fragments: Vec<&str> = state_prompt_chain.iter().map(AsRef::as_ref).collect();
    fragments.push(starter_prompt);
    ComposedPrompt {
        system_part: join(&fragments),
        conversation_part: Vec::new(),
    }
}

pub fn compose_response<S: AsRef<str>>(
    state_prompt_chain: &[S],
    utterances: &[Utterance],
) -> ComposedPrompt {
    ComposedPrompt {
        system_part: join(state_prompt_chain),
        conversation_part: utterances.to_vec(),
    }
}

pub fn compose_decision(decision_prompt: &str, utterances: &[Utterance]) -> ComposedPrompt {
    ComposedPrompt {
        system_part: join(&[decision_prompt, DECISION_DIRECTIVE]),
        conversation_part: utterances.to_vec(),
    }
}

pub fn compose_action(action_prompt: &str, utterances: &[Utterance]) -> ComposedPrompt {
    ComposedPrompt {
        system_part: action_prompt.to_owned(),
        conversation_part: utterances.to_vec(),
    }
}

/// Chain used to close the conversation when a final node is reached.
pub fn compose_closing<S: AsRef<str>>(
    state_prompt_chain: &[S],
    utterances: &[Utterance],
) -> ComposedPrompt {
    let mut fragments: Vec<&str> = state_prompt_chain.iter().map(AsRef::as_ref).collect();
    fragments.push(CLOSING_DIRECTIVE);
    ComposedPrompt {
        system_part: join(&fragments),
        conversation_part: utterances.to_vec(),
    }
}

/// Renders the state prompts of the enclosing outer states (outermost first)
/// followed by the inner state's own prompt.
pub fn effective_state_prompt_chain<'a, I>(
    outer_chain: I,
    inner_prompt: &PromptTemplate,
    storage: &InteractionStorage,
) -> Result<Vec<String>, TemplateError>
where
    I: IntoIterator<Item = &'a PromptTemplate>,
{
    let mut chain = outer_chain
        .into_iter()
        .map(|t| t.render(storage))
        .collect::<Result<Vec<_>, _>>()?;
    chain.push(inner_prompt.render(storage)?);
    Ok(chain)
}
