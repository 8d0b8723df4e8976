//! Predefined special-purpose states.
//!
//! Each builder produces an ordinary [`StateNode`]: prompts, the transition,
//! its decisions and its extraction action are generated from a handful of
//! parameters. The engine treats the result like any hand-built state.

pub mod wording;

use crate::machine::{Action, Decision, StateFlags, StateNode, Target, Transition};
use crate::prompt::PromptTemplate;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleChoiceParams {
    pub name: String,
    pub next: Target,
    /// Storage key holding a JSON array of option strings.
    pub options_key: String,
    /// Storage key receiving the chosen option.
    pub chosen_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityGapInquiryParams {
    pub name: String,
    pub next: Target,
    /// Storage key holding the missed activity.
    pub missed_key: String,
    /// Storage key receiving the extracted reason.
    pub reason_key: String,
}

fn template(text: &str, slot: &str, key: &str) -> PromptTemplate {
    PromptTemplate::new(text.replace(slot, &format!("{{{key}")))
        .expect("library wording uses known filters only")
}

fn fixed(text: &str) -> PromptTemplate {
    PromptTemplate::new(text).expect("library wording uses known filters only")
}

/// Presents the options stored under `options_key` and extracts the one the
/// user picks into `chosen_key`.
pub fn make_single_choice_state(params: SingleChoiceParams) -> StateNode {
    use wording::*;
    let with_options = |text| template(text, "{options", &params.options_key);
    StateNode {
        name: params.name,
        state_prompt: with_options(SINGLE_CHOICE_PROMPT),
        starter_prompt: Some(fixed(SINGLE_CHOICE_STARTER)),
        transitions: vec![Transition {
            decisions: vec![
                Decision::DynamicPrompt(with_options(SINGLE_CHOICE_TRIGGER)),
                Decision::StaticPrompt(fixed(SINGLE_CHOICE_GUARD)),
            ],
            actions: vec![Action::DynamicExtraction {
                template: with_options(SINGLE_CHOICE_EXTRACTION),
                storage_key: params.chosen_key,
            }],
            target: params.next,
        }],
        flags: StateFlags {
            starts_conversation: true,
            ..StateFlags::default()
        },
        inner: None,
    }
}

/// Asks why the activity stored under `missed_key` was missed and extracts the
/// reason into `reason_key`.
pub fn make_activity_gap_inquiry_state(params: ActivityGapInquiryParams) -> StateNode {
    use wording::*;
    let with_missed = |text| template(text, "{missed", &params.missed_key);
    StateNode {
        name: params.name,
        state_prompt: with_missed(GAP_INQUIRY_PROMPT),
        starter_prompt: Some(with_missed(GAP_INQUIRY_STARTER)),
        transitions: vec![Transition {
            decisions: vec![
                Decision::DynamicPrompt(with_missed(GAP_INQUIRY_TRIGGER)),
                Decision::StaticPrompt(fixed(GAP_INQUIRY_GUARD)),
            ],
            actions: vec![Action::DynamicExtraction {
                template: with_missed(GAP_INQUIRY_EXTRACTION),
                storage_key: params.reason_key,
            }],
            target: params.next,
        }],
        flags: StateFlags {
            starts_conversation: true,
            ..StateFlags::default()
        },
        inner: None,
    }
}
