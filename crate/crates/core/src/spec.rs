//! JSON machine specifications.
//!
//! A spec document mirrors the programmatic constructors one to one: states
//! with prompts, flags and transitions, outer states with an inner machine,
//! and the two library state kinds. Loading reports every problem it finds as
//! a [`Diagnostic`] carrying a JSON path such as
//! `$.states[0].transitions[1].target`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::machine::{Action, Decision, Issue, Location, Machine, StateFlags, StateNode, Target, Transition};
use crate::prompt::PromptTemplate;
use crate::registry::Registry;
use crate::states::{
    make_activity_gap_inquiry_state, make_single_choice_state, ActivityGapInquiryParams,
    SingleChoiceParams,
};
use crate::storage::InteractionStorage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub initial: String,
    pub states: Vec<StateSpec>,
    /// Storage entries present when an instance is created or reset.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub initial_storage: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateSpec {
    State(PlainStateSpec),
    Outer(OuterStateSpec),
    SingleChoice(SingleChoiceSpec),
    ActivityGapInquiry(ActivityGapInquirySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlainStateSpec {
    pub name: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starter: Option<String>,
    #[serde(default)]
    pub starts_conversation: bool,
    #[serde(default)]
    pub oblivious: bool,
    #[serde(default)]
    pub auto_transit: bool,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterStateSpec {
    pub name: String,
    pub prompt: String,
    #[serde(default)]
    pub oblivious: bool,
    #[serde(default)]
    pub auto_transit: bool,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
    pub initial: String,
    pub states: Vec<StateSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleChoiceSpec {
    pub name: String,
    pub next: Target,
    pub options_key: String,
    pub chosen_key: String,
    #[serde(default)]
    pub oblivious: bool,
    #[serde(default)]
    pub auto_transit: bool,
    /// Checked after the generated transition.
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityGapInquirySpec {
    pub name: String,
    pub next: Target,
    pub missed_key: String,
    pub reason_key: String,
    #[serde(default)]
    pub oblivious: bool,
    #[serde(default)]
    pub auto_transit: bool,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    #[serde(default)]
    pub decisions: Vec<DecisionSpec>,
    #[serde(default)]
    pub actions: Vec<ActionSpec>,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecisionSpec {
    Static { prompt: String },
    Dynamic { prompt: String },
    Predicate { id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionSpec {
    StaticExtraction { prompt: String, key: String },
    DynamicExtraction { prompt: String, key: String },
    Effect { id: String },
}

impl StateSpec {
    pub fn name(&self) -> &str {
        match self {
            StateSpec::State(s) => &s.name,
            StateSpec::Outer(s) => &s.name,
            StateSpec::SingleChoice(s) => &s.name,
            StateSpec::ActivityGapInquiry(s) => &s.name,
        }
    }

    fn is_library(&self) -> bool {
        matches!(self, StateSpec::SingleChoice(_) | StateSpec::ActivityGapInquiry(_))
    }

    fn children(&self) -> &[StateSpec] {
        match self {
            StateSpec::Outer(o) => &o.states,
            _ => &[],
        }
    }
}

/// Collects diagnostics while converting a spec tree.
struct Builder {
    diagnostics: Vec<Diagnostic>,
}

impl Builder {
    fn error(&mut self, path: String, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            path,
            message: message.into(),
        });
    }

    fn template(&mut self, path: String, text: &str) -> PromptTemplate {
        match PromptTemplate::new(text) {
            Ok(t) => t,
            Err(e) => {
                self.error(path, e.to_string());
                PromptTemplate::new("").expect("empty template")
            }
        }
    }

    fn non_empty_key(&mut self, path: String, key: &str) {
        if key.trim().is_empty() {
            self.error(path, "storage key must not be empty");
        }
    }

    fn transitions(&mut self, base: &str, specs: &[TransitionSpec]) -> Vec<Transition> {
        specs
            .iter()
            .enumerate()
            .map(|(t, spec)| {
                let at = format!("{base}[{t}]");
                let decisions = spec
                    .decisions
                    .iter()
                    .enumerate()
                    .map(|(d, dec)| {
                        let at = format!("{at}.decisions[{d}]");
                        match dec {
                            DecisionSpec::Static { prompt } => {
                                Decision::StaticPrompt(self.template(format!("{at}.prompt"), prompt))
                            }
                            DecisionSpec::Dynamic { prompt } => {
                                Decision::DynamicPrompt(self.template(format!("{at}.prompt"), prompt))
                            }
                            DecisionSpec::Predicate { id } => Decision::Predicate(id.clone()),
                        }
                    })
                    .collect();
                let actions = spec
                    .actions
                    .iter()
                    .enumerate()
                    .map(|(a, act)| {
                        let at = format!("{at}.actions[{a}]");
                        match act {
                            ActionSpec::StaticExtraction { prompt, key } => Action::StaticExtraction {
                                template: self.template(format!("{at}.prompt"), prompt),
                                storage_key: key.clone(),
                            },
                            ActionSpec::DynamicExtraction { prompt, key } => {
                                Action::DynamicExtraction {
                                    template: self.template(format!("{at}.prompt"), prompt),
                                    storage_key: key.clone(),
                                }
                            }
                            ActionSpec::Effect { id } => Action::Effect(id.clone()),
                        }
                    })
                    .collect();
                Transition {
                    decisions,
                    actions,
                    target: spec.target.clone(),
                }
            })
            .collect()
    }

    fn state(&mut self, base: &str, spec: &StateSpec) -> StateNode {
        match spec {
            StateSpec::State(s) => StateNode {
                name: s.name.clone(),
                state_prompt: self.template(format!("{base}.prompt"), &s.prompt),
                starter_prompt: s
                    .starter
                    .as_deref()
                    .map(|text| self.template(format!("{base}.starter"), text)),
                transitions: self.transitions(&format!("{base}.transitions"), &s.transitions),
                flags: StateFlags {
                    starts_conversation: s.starts_conversation,
                    oblivious: s.oblivious,
                    auto_transit: s.auto_transit,
                },
                inner: None,
            },
            StateSpec::Outer(o) => {
                let states = o
                    .states
                    .iter()
                    .enumerate()
                    .map(|(i, child)| self.state(&format!("{base}.states[{i}]"), child))
                    .collect();
                StateNode::new(o.name.clone(), self.template(format!("{base}.prompt"), &o.prompt))
                    .with_flags(StateFlags {
                        starts_conversation: false,
                        oblivious: o.oblivious,
                        auto_transit: o.auto_transit,
                    })
                    .with_inner(o.initial.clone(), states)
                    .with_transitions(self.transitions(&format!("{base}.transitions"), &o.transitions))
            }
            StateSpec::SingleChoice(s) => {
                self.non_empty_key(format!("{base}.options_key"), &s.options_key);
                self.non_empty_key(format!("{base}.chosen_key"), &s.chosen_key);
                let mut node = make_single_choice_state(SingleChoiceParams {
                    name: s.name.clone(),
                    next: s.next.clone(),
                    options_key: s.options_key.clone(),
                    chosen_key: s.chosen_key.clone(),
                });
                node.flags.oblivious = s.oblivious;
                node.flags.auto_transit = s.auto_transit;
                let extra = self.transitions(&format!("{base}.transitions"), &s.transitions);
                node.transitions.extend(extra);
                node
            }
            StateSpec::ActivityGapInquiry(s) => {
                self.non_empty_key(format!("{base}.missed_key"), &s.missed_key);
                self.non_empty_key(format!("{base}.reason_key"), &s.reason_key);
                let mut node = make_activity_gap_inquiry_state(ActivityGapInquiryParams {
                    name: s.name.clone(),
                    next: s.next.clone(),
                    missed_key: s.missed_key.clone(),
                    reason_key: s.reason_key.clone(),
                });
                node.flags.oblivious = s.oblivious;
                node.flags.auto_transit = s.auto_transit;
                let extra = self.transitions(&format!("{base}.transitions"), &s.transitions);
                node.transitions.extend(extra);
                node
            }
        }
    }
}

impl MachineSpec {
    /// Parses a spec document; type errors carry the path of the offending value.
    pub fn from_json(text: &str) -> Result<Self, Diagnostics> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|err| {
            let path = err.path().to_string();
            // syntax errors have no position in the document tree
            let path = match path.as_str() {
                "." | "?" => "$".to_owned(),
                p => format!("$.{p}"),
            };
            Diagnostics(vec![Diagnostic {
                path,
                message: err.into_inner().to_string(),
            }])
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn initial_storage(&self) -> InteractionStorage {
        self.initial_storage.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Validates the spec and builds the machine it describes.
    pub fn build(&self, registry: &Registry) -> Result<Machine, Diagnostics> {
        let mut builder = Builder {
            diagnostics: Vec::new(),
        };
        if self.name.trim().is_empty() {
            builder.error("$.name".into(), "machine name must not be empty");
        }
        let states: Vec<StateNode> = self
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| builder.state(&format!("$.states[{i}]"), s))
            .collect();
        let mut diagnostics = builder.diagnostics;
        match Machine::build(self.initial.clone(), states, registry) {
            Ok(machine) if diagnostics.is_empty() => Ok(machine),
            Ok(_) => Err(Diagnostics(diagnostics)),
            Err(err) => {
                diagnostics.extend(err.0.iter().map(|issue| self.diagnostic(issue)));
                Err(Diagnostics(diagnostics))
            }
        }
    }

    fn state_at(&self, index: &[usize]) -> &StateSpec {
        let mut node = &self.states[index[0]];
        for &i in &index[1..] {
            node = &node.children()[i];
        }
        node
    }

    fn state_path(index: &[usize]) -> String {
        let mut path = "$".to_owned();
        for i in index {
            path.push_str(&format!(".states[{i}]"));
        }
        path
    }

    /// JSON path of a transition; generated library transitions map onto `next`.
    fn transition_path(&self, state: &[usize], transition: usize) -> Result<String, String> {
        let base = Self::state_path(state);
        if self.state_at(state).is_library() {
            if transition == 0 {
                Err(format!("{base}.next"))
            } else {
                Ok(format!("{base}.transitions[{}]", transition - 1))
            }
        } else {
            Ok(format!("{base}.transitions[{transition}]"))
        }
    }

    fn diagnostic(&self, issue: &Issue) -> Diagnostic {
        let path = match &issue.location {
            Location::Machine => "$".to_owned(),
            Location::StateList { outer } => format!("{}.states", Self::state_path(outer)),
            Location::Initial { outer } => format!("{}.initial", Self::state_path(outer)),
            Location::State { state } => Self::state_path(state),
            Location::StateName { state } => format!("{}.name", Self::state_path(state)),
            Location::Starter { state } => {
                format!("{}.starts_conversation", Self::state_path(state))
            }
            Location::Target { state, transition } => match self.transition_path(state, *transition) {
                Ok(p) => format!("{p}.target"),
                Err(next) => next,
            },
            Location::Decision {
                state,
                transition,
                decision,
            } => match self.transition_path(state, *transition) {
                Ok(p) => format!("{p}.decisions[{decision}]"),
                Err(next) => next,
            },
            Location::Action {
                state,
                transition,
                action,
            } => match self.transition_path(state, *transition) {
                Ok(p) => format!("{p}.actions[{action}]"),
                Err(next) => next,
            },
        };
        Diagnostic {
            path,
            message: issue.message.clone(),
        }
    }
}

/// Parses and builds in one step.
pub fn load_machine(text: &str, registry: &Registry) -> Result<(MachineSpec, Machine), Diagnostics> {
    let spec = MachineSpec::from_json(text)?;
    let machine = spec.build(registry)?;
    Ok((spec, machine))
}
