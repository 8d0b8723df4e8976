//! The static structure of a conversation: states, transitions, decisions,
//! actions and their nesting.
//!
//! States refer to each other by name. [`Machine::build`] checks the tree and
//! indexes it so the engine can walk containment chains quickly.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::prompt::PromptTemplate;
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    /// Prompt used verbatim.
    StaticPrompt(PromptTemplate),
    /// Prompt rendered against storage before use.
    DynamicPrompt(PromptTemplate),
    /// Code-backed decision registered under a name.
    Predicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    StaticExtraction {
        template: PromptTemplate,
        storage_key: String,
    },
    DynamicExtraction {
        template: PromptTemplate,
        storage_key: String,
    },
    Effect(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// A sibling state in the enclosing machine.
    State(String),
    Final,
    /// Re-enter the named outer state at its last active inner state.
    History(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub decisions: Vec<Decision>,
    pub actions: Vec<Action>,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateFlags {
    #[serde(default)]
    pub starts_conversation: bool,
    /// Re-entering the state discards its previous utterances.
    #[serde(default)]
    pub oblivious: bool,
    /// Transitions are checked on arrival without waiting for the user.
    #[serde(default)]
    pub auto_transit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InnerMachine {
    pub initial: String,
    pub states: Vec<StateNode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateNode {
    pub name: String,
    pub state_prompt: PromptTemplate,
    pub starter_prompt: Option<PromptTemplate>,
    pub transitions: Vec<Transition>,
    pub flags: StateFlags,
    /// Present iff this is an outer state.
    pub inner: Option<InnerMachine>,
}

impl StateNode {
    pub fn new(name: impl Into<String>, state_prompt: PromptTemplate) -> Self {
        Self {
            name: name.into(),
            state_prompt,
            starter_prompt: None,
            transitions: Vec::new(),
            flags: StateFlags::default(),
            inner: None,
        }
    }

    /// Sets the starter prompt and marks the state as opening the conversation.
    pub fn with_starter(mut self, starter: PromptTemplate) -> Self {
        self.starter_prompt = Some(starter);
        self.flags.starts_conversation = true;
        self
    }

    pub fn with_transition(mut self, transition: Transition) -> Self {
        self.transitions.push(transition);
        self
    }

    pub fn with_transitions(mut self, transitions: Vec<Transition>) -> Self {
        self.transitions.extend(transitions);
        self
    }

    pub fn with_flags(mut self, flags: StateFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn oblivious(mut self, on: bool) -> Self {
        self.flags.oblivious = on;
        self
    }

    pub fn auto_transit(mut self, on: bool) -> Self {
        self.flags.auto_transit = on;
        self
    }

    /// Turns this state into an outer state wrapping `states`.
    pub fn with_inner(mut self, initial: impl Into<String>, states: Vec<StateNode>) -> Self {
        self.inner = Some(InnerMachine {
            initial: initial.into(),
            states,
        });
        self
    }

    pub fn is_outer(&self) -> bool {
        self.inner.is_some()
    }
}

/// Where a structural problem sits in the state tree. `state` holds child
/// indices from the top-level state list downwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Machine,
    StateList { outer: Vec<usize> },
    Initial { outer: Vec<usize> },
    State { state: Vec<usize> },
    StateName { state: Vec<usize> },
    Starter { state: Vec<usize> },
    Target { state: Vec<usize>, transition: usize },
    Decision { state: Vec<usize>, transition: usize, decision: usize },
    Action { state: Vec<usize>, transition: usize, action: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub location: Location,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("invalid machine: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct MachineError(pub Vec<Issue>);

#[derive(Debug, Clone)]
struct NodeInfo {
    /// Child indices from the top-level list.
    index: Vec<usize>,
    parent: Option<String>,
}

/// A validated, indexed state tree.
#[derive(Debug, Clone)]
pub struct Machine {
    initial: String,
    states: Vec<StateNode>,
    index: HashMap<String, NodeInfo>,
}

impl Machine {
    pub fn build(
        initial: impl Into<String>,
        states: Vec<StateNode>,
        registry: &Registry,
    ) -> Result<Self, MachineError> {
        let initial = initial.into();
        let mut issues = Vec::new();
        let mut index = HashMap::new();
        check_level(&initial, &states, &[], None, registry, &mut index, &mut issues);
        if issues.is_empty() {
            Ok(Self {
                initial,
                states,
                index,
            })
        } else {
            Err(MachineError(issues))
        }
    }

    pub fn initial(&self) -> &str {
        &self.initial
    }

    pub fn top_level(&self) -> &[StateNode] {
        &self.states
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Panics on unknown names; names come from the validated tree.
    pub fn state(&self, name: &str) -> &StateNode {
        let info = &self.index[name];
        let mut node = &self.states[info.index[0]];
        for &i in &info.index[1..] {
            node = &node.inner.as_ref().expect("indexed through outer state").states[i];
        }
        node
    }

    pub fn get(&self, name: &str) -> Option<&StateNode> {
        self.contains(name).then(|| self.state(name))
    }

    pub fn parent(&self, name: &str) -> Option<&str> {
        self.index.get(name)?.parent.as_deref()
    }

    /// Outer states enclosing `name`, outermost first (excluding `name`).
    pub fn ancestors(&self, name: &str) -> Vec<&str> {
        let mut chain = Vec::new();
        let mut cursor = self.parent(name);
        while let Some(p) = cursor {
            chain.push(p);
            cursor = self.parent(p);
        }
        chain.reverse();
        chain
    }

    /// Path from the top level down to `name`.
    pub fn path_to(&self, name: &str) -> Vec<String> {
        let mut path: Vec<String> = self.ancestors(name).into_iter().map(str::to_owned).collect();
        path.push(name.to_owned());
        path
    }

    /// Follows initial pointers from `name` down to a leaf.
    pub fn initial_descent(&self, name: &str) -> Vec<String> {
        let mut chain = vec![name.to_owned()];
        let mut node = self.state(name);
        while let Some(inner) = &node.inner {
            chain.push(inner.initial.clone());
            node = self.state(&inner.initial);
        }
        chain
    }

    /// Path of the active states when an instance is created.
    pub fn initial_path(&self) -> Vec<String> {
        self.initial_descent(&self.initial)
    }

    /// Every state transitively contained in `name`, excluding itself.
    pub fn descendants(&self, name: &str) -> Vec<&str> {
        let mut out = Vec::new();
        fn walk<'a>(node: &'a StateNode, out: &mut Vec<&'a str>) {
            if let Some(inner) = &node.inner {
                for child in &inner.states {
                    out.push(child.name.as_str());
                    walk(child, out);
                }
            }
        }
        walk(self.state(name), &mut out);
        out
    }

    pub fn all_states(&self) -> impl Iterator<Item = &StateNode> {
        let mut names: Vec<&String> = self.index.keys().collect();
        names.sort_by_key(|n| &self.index[*n].index);
        names.into_iter().map(|n| self.state(n))
    }
}

fn check_level(
    initial: &str,
    states: &[StateNode],
    prefix: &[usize],
    parent: Option<&str>,
    registry: &Registry,
    index: &mut HashMap<String, NodeInfo>,
    issues: &mut Vec<Issue>,
) {
    let mut push = |location, message: String| issues.push(Issue { location, message });
    if states.is_empty() {
        push(
            Location::StateList {
                outer: prefix.to_vec(),
            },
            "a machine needs at least one state".into(),
        );
    } else if !states.iter().any(|s| s.name == initial) {
        push(
            Location::Initial {
                outer: prefix.to_vec(),
            },
            format!("initial state `{initial}` is not defined at this level"),
        );
    }

    let siblings: HashMap<&str, &StateNode> = states.iter().map(|s| (s.name.as_str(), s)).collect();

    for (i, state) in states.iter().enumerate() {
        let mut at = prefix.to_vec();
        at.push(i);

        if state.name.trim().is_empty() {
            push(Location::StateName { state: at.clone() }, "state name must not be empty".into());
        } else if index.contains_key(&state.name) {
            push(
                Location::StateName { state: at.clone() },
                format!("duplicate state name `{}`", state.name),
            );
        } else {
            index.insert(
                state.name.clone(),
                NodeInfo {
                    index: at.clone(),
                    parent: parent.map(str::to_owned),
                },
            );
        }

        if state.flags.starts_conversation && state.starter_prompt.is_none() {
            push(
                Location::Starter { state: at.clone() },
                format!("state `{}` starts the conversation but has no starter prompt", state.name),
            );
        }

        for (t, transition) in state.transitions.iter().enumerate() {
            let target_at = Location::Target {
                state: at.clone(),
                transition: t,
            };
            match &transition.target {
                Target::Final => {}
                Target::State(name) => {
                    if !siblings.contains_key(name.as_str()) {
                        push(
                            target_at,
                            format!("target `{name}` does not resolve in the enclosing machine"),
                        );
                    }
                }
                Target::History(name) => match siblings.get(name.as_str()) {
                    Some(s) if s.is_outer() => {}
                    Some(_) => push(
                        target_at,
                        format!("history target `{name}` is not an outer state"),
                    ),
                    None => push(
                        target_at,
                        format!(
                            "history target `{name}` does not name an outer state in the enclosing machine"
                        ),
                    ),
                },
            }
            for (d, decision) in transition.decisions.iter().enumerate() {
                if let Decision::Predicate(id) = decision {
                    if !registry.has_predicate(id) {
                        push(
                            Location::Decision {
                                state: at.clone(),
                                transition: t,
                                decision: d,
                            },
                            format!("unknown predicate `{id}`"),
                        );
                    }
                }
            }
            for (a, action) in transition.actions.iter().enumerate() {
                let loc = || Location::Action {
                    state: at.clone(),
                    transition: t,
                    action: a,
                };
                match action {
                    Action::StaticExtraction { storage_key, .. }
                    | Action::DynamicExtraction { storage_key, .. } => {
                        if storage_key.trim().is_empty() {
                            push(loc(), "extraction action needs a non-empty storage key".into());
                        }
                    }
                    Action::Effect(id) => {
                        if !registry.has_effect(id) {
                            push(loc(), format!("unknown effect `{id}`"));
                        }
                    }
                }
            }
        }
    }

    for (i, state) in states.iter().enumerate() {
        if let Some(inner) = &state.inner {
            let mut at = prefix.to_vec();
            at.push(i);
            check_level(
                &inner.initial,
                &inner.states,
                &at,
                Some(&state.name),
                registry,
                index,
                issues,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tpl(s: &str) -> PromptTemplate {
        PromptTemplate::new(s).unwrap()
    }

    fn to(target: Target) -> Transition {
        Transition {
            decisions: vec![],
            actions: vec![],
            target,
        }
    }

    fn nested() -> Vec<StateNode> {
        vec![
            StateNode::new("Outer", tpl("o"))
                .with_transition(to(Target::State("Side".into())))
                .with_inner(
                    "A",
                    vec![
                        StateNode::new("A", tpl("a")).with_transition(to(Target::State("B".into()))),
                        StateNode::new("B", tpl("b")).with_inner("C", vec![StateNode::new("C", tpl("c"))]),
                    ],
                ),
            StateNode::new("Side", tpl("s")).with_transition(to(Target::History("Outer".into()))),
        ]
    }

    #[test]
    fn indexes_nested_tree() {
        let m = Machine::build("Outer", nested(), &Registry::default()).unwrap();
        assert_eq!(m.initial_path(), vec!["Outer", "A"]);
        assert_eq!(m.ancestors("C"), vec!["Outer", "B"]);
        assert_eq!(m.path_to("C"), vec!["Outer", "B", "C"]);
        assert_eq!(m.descendants("Outer"), vec!["A", "B", "C"]);
        assert_eq!(m.parent("Side"), None);
        assert_eq!(m.state("C").state_prompt.as_str(), "c");
        assert_eq!(m.initial_descent("B"), vec!["B", "C"]);
    }

    #[test]
    fn reports_structural_issues() {
        let states = vec![
            StateNode::new("A", tpl("a"))
                .with_transition(to(Target::State("Nowhere".into())))
                .with_transition(to(Target::History("B".into()))),
            StateNode::new("B", tpl("b")),
            StateNode::new("B", tpl("dup")),
        ];
        let err = Machine::build("Missing", states, &Registry::default()).unwrap_err();
        let locations: Vec<_> = err.0.iter().map(|i| i.location.clone()).collect();
        assert!(locations.contains(&Location::Initial { outer: vec![] }));
        assert!(locations.contains(&Location::Target {
            state: vec![0],
            transition: 0
        }));
        assert!(locations.contains(&Location::Target {
            state: vec![0],
            transition: 1
        }));
        assert!(locations.contains(&Location::StateName { state: vec![2] }));
    }

    #[test]
    fn starter_flag_requires_prompt() {
        let mut s = StateNode::new("A", tpl("a"));
        s.flags.starts_conversation = true;
        let err = Machine::build("A", vec![s], &Registry::default()).unwrap_err();
        assert_eq!(err.0[0].location, Location::Starter { state: vec![0] });
    }

    #[test]
    fn inner_targets_do_not_escape_their_level() {
        let states = vec![
            StateNode::new("Outer", tpl("o")).with_inner(
                "A",
                vec![StateNode::new("A", tpl("a")).with_transition(to(Target::State("Top".into())))],
            ),
            StateNode::new("Top", tpl("t")),
        ];
        let err = Machine::build("Outer", states, &Registry::default()).unwrap_err();
        assert_eq!(
            err.0[0].location,
            Location::Target {
                state: vec![0, 0],
                transition: 0
            }
        );
    }
}
