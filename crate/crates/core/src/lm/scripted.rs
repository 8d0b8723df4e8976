use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{LmBackend, LmError, LmRequest};

/// How a script entry selects the request it answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// The request's system part equals the pattern.
    ExactSystem(String),
    /// The request's system part contains the pattern.
    Substring(String),
    /// The zero-based position of the request in the session.
    SequenceIndex(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub matcher: Matcher,
    pub reply: String,
    /// Entries answer once unless marked repeatable.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repeat: bool,
}

impl ScriptEntry {
    pub fn substring(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Substring(pattern.into()),
            reply: reply.into(),
            repeat: false,
        }
    }

    pub fn exact_system(system: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::ExactSystem(system.into()),
            reply: reply.into(),
            repeat: false,
        }
    }

    pub fn sequence_index(index: u64, reply: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::SequenceIndex(index),
            reply: reply.into(),
            repeat: false,
        }
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }

    fn matches(&self, index: u64, request: &LmRequest) -> bool {
        match &self.matcher {
            Matcher::ExactSystem(s) => request.system_part == *s,
            Matcher::Substring(s) => request.system_part.contains(s.as_str()),
            Matcher::SequenceIndex(i) => *i == index,
        }
    }
}

#[derive(Debug, Default)]
struct Cursor {
    consumed: Vec<bool>,
    requests: Vec<LmRequest>,
}

/// Deterministic stand-in for a language model.
///
/// Each request is answered by the first entry, in script order, that matches
/// and has not been used up. The same request sequence always yields the same
/// replies.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    cursor: Mutex<Cursor>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let cursor = Cursor {
            consumed: vec![false; entries.len()],
            requests: Vec::new(),
        };
        Self {
            entries,
            cursor: Mutex::new(cursor),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    /// Forgets all consumption and the request log.
    pub fn rewind(&self) {
        let mut cursor = self.cursor.lock().unwrap();
        cursor.consumed.iter_mut().for_each(|c| *c = false);
        cursor.requests.clear();
    }

    /// Every request received so far, in order.
    pub fn requests(&self) -> Vec<LmRequest> {
        self.cursor.lock().unwrap().requests.clone()
    }

    pub fn request_count(&self) -> usize {
        self.cursor.lock().unwrap().requests.len()
    }

    pub fn consumed(&self) -> Vec<bool> {
        self.cursor.lock().unwrap().consumed.clone()
    }

    pub fn consumed_count(&self) -> usize {
        self.consumed().into_iter().filter(|c| *c).count()
    }

    pub fn unconsumed(&self) -> Vec<&ScriptEntry> {
        let consumed = self.consumed();
        self.entries
            .iter()
            .zip(consumed)
            .filter_map(|(e, used)| (!used || e.repeat).then_some(e))
            .collect()
    }
}

impl LmBackend for ScriptedBackend {
    fn complete(&self, request: &LmRequest) -> Result<String, LmError> {
        let mut cursor = self.cursor.lock().unwrap();
        let index = cursor.requests.len() as u64;
        cursor.requests.push(request.clone());
        let hit = self
            .entries
            .iter()
            .enumerate()
            .find(|(i, e)| (e.repeat || !cursor.consumed[*i]) && e.matches(index, request));
        match hit {
            Some((i, entry)) => {
                cursor.consumed[i] = true;
                tracing::trace!(index, entry = i, "script hit");
                Ok(entry.reply.clone())
            }
            None => Err(LmError::ScriptMiss {
                index,
                excerpt: request.system_part.chars().take(80).collect(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::DecodeParams;

    fn req(system: &str) -> LmRequest {
        LmRequest {
            system_part: system.into(),
            turns: vec![],
            decode_params: DecodeParams::default(),
        }
    }

    #[test]
    fn substring_entry_answers() {
        let backend = ScriptedBackend::new(vec![ScriptEntry::substring(
            "compose a single, very short message",
            "Hi Daniel…",
        )]);
        let reply = backend
            .complete(&req("As a coach.\nPlease compose a single, very short message now."))
            .unwrap();
        assert_eq!(reply, "Hi Daniel…");
    }

    #[test]
    fn empty_script_misses() {
        let backend = ScriptedBackend::new(vec![]);
        assert!(matches!(
            backend.complete(&req("anything")),
            Err(LmError::ScriptMiss { index: 0, .. })
        ));
    }

    #[test]
    fn first_listed_match_wins() {
        let backend = ScriptedBackend::new(vec![
            ScriptEntry::sequence_index(0, "by index"),
            ScriptEntry::substring("x", "by substring"),
        ]);
        assert_eq!(backend.complete(&req("x")).unwrap(), "by index");
        assert_eq!(backend.complete(&req("x")).unwrap(), "by substring");
    }

    #[test]
    fn entries_are_single_use_unless_repeating() {
        let backend = ScriptedBackend::new(vec![
            ScriptEntry::substring("decide", "NO"),
            ScriptEntry::substring("decide", "YES"),
            ScriptEntry::exact_system("p", "again").repeating(),
        ]);
        assert_eq!(backend.complete(&req("decide")).unwrap(), "NO");
        assert_eq!(backend.complete(&req("decide")).unwrap(), "YES");
        assert!(backend.complete(&req("decide")).is_err());
        for _ in 0..3 {
            assert_eq!(backend.complete(&req("p")).unwrap(), "again");
        }
        assert_eq!(backend.consumed(), vec![true, true, true]);
    }

    #[test]
    fn rewind_replays_identically() {
        let backend = ScriptedBackend::new(vec![
            ScriptEntry::substring("a", "1"),
            ScriptEntry::substring("a", "2"),
        ]);
        let first: Vec<_> = (0..2).map(|_| backend.complete(&req("a")).unwrap()).collect();
        backend.rewind();
        let second: Vec<_> = (0..2).map(|_| backend.complete(&req("a")).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn script_file_format() {
        let text = r#"[
            {"matcher": {"substring": "decide"}, "reply": "NO"},
            {"matcher": {"exact_system": "p"}, "reply": "hi", "repeat": true},
            {"matcher": {"sequence_index": 3}, "reply": "third"}
        ]"#;
        let backend = ScriptedBackend::from_json(text).unwrap();
        assert_eq!(backend.entries()[2], ScriptEntry::sequence_index(3, "third"));
        assert!(backend.entries()[1].repeat);
    }
}
