use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Agent,
    User,
}

/// One turn of the conversation, attributed to the state it was produced or
/// received in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub seq: u64,
    pub role: Role,
    pub state: String,
    pub content: String,
}

/// Merges several logs into one, ordered by sequence number.
pub fn merge_by_seq<'a, I>(logs: I) -> Vec<Utterance>
where
    I: IntoIterator<Item = &'a [Utterance]>,
{
    let mut all: Vec<Utterance> = logs.into_iter().flatten().cloned().collect();
    all.sort_by_key(|u| u.seq);
    all
}
