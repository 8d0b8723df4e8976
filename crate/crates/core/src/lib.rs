//! Hierarchical state machines that orchestrate language-model conversations.
//!
//! States and transitions carry small prompt templates. While a conversation
//! runs, the [`engine`] composes them with the utterances collected so far to
//! generate replies, decide whether transitions fire and extract values into
//! the per-conversation [`storage`].

pub mod engine;
pub mod lm;
pub mod machine;
pub mod prompt;
pub mod registry;
pub mod scenario;
pub mod spec;
pub mod states;
pub mod storage;
pub mod transcript;
pub mod utterance;

pub use engine::{Agent, EngineError, Evaluator, Fired, Session, Status, AUTO_TRANSIT_CAP};
pub use lm::{LmBackend, LmError, LmRequest, ScriptEntry, ScriptedBackend};
pub use machine::{Action, Decision, Machine, StateFlags, StateNode, Target, Transition};
pub use prompt::{ComposedPrompt, PromptTemplate, TemplateError};
pub use registry::Registry;
pub use spec::{load_machine, Diagnostic, Diagnostics, MachineSpec};
pub use storage::InteractionStorage;
pub use utterance::{Role, Utterance};
