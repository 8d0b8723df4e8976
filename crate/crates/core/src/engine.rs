//! The conversation runtime.
//!
//! An [`Agent`] drives one [`Session`] over a shared [`Machine`]. Each user
//! utterance is logged in the active leaf state, then the transitions of the
//! active states are checked innermost first. When one fires its actions run
//! and the machine moves on; otherwise the model answers in the current state.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::lm::{DecodeParams, LmBackend, LmError, LmRequest};
use crate::machine::{Action, Decision, Machine, StateNode, Target, Transition};
use crate::prompt::{
    compose_action, compose_closing, compose_decision, compose_response, compose_starter,
    effective_state_prompt_chain, ComposedPrompt, TemplateError,
};
use crate::registry::Registry;
use crate::storage::InteractionStorage;
use crate::utterance::{merge_by_seq, Role, Utterance};

/// Automatic transitions allowed within one `respond` call.
pub const AUTO_TRANSIT_CAP: usize = 8;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("state `{0}` does not start the conversation")]
    NotAStarterState(String),
    #[error("the interaction has already been started")]
    AlreadyStarted,
    #[error("the interaction has ended")]
    InteractionEnded,
    #[error("language model failure: {0}")]
    Lm(#[from] LmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("decision completion is neither YES nor NO: {0:?}")]
    UnparsableDecision(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("unknown effect `{0}`")]
    UnknownEffect(String),
    #[error("target `{0}` does not resolve")]
    UnresolvedTarget(String),
    #[error("history of `{0}` entered before it was ever left")]
    NoHistoryRecorded(String),
    #[error("more than {0} automatic transitions in one turn")]
    CycleLimitExceeded(usize),
    #[error("session does not fit the machine: {0}")]
    InvalidSession(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Created,
    Active,
    Ended,
}

/// Everything that changes while a conversation runs. Serializable so it can
/// be persisted between requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: Uuid,
    pub status: Status,
    /// Active states from the top level down to the active leaf.
    pub current_path: Vec<String>,
    pub logs: BTreeMap<String, Vec<Utterance>>,
    pub storage: InteractionStorage,
    /// Outer state name to the child that was active when it was last left.
    pub history: BTreeMap<String, String>,
    pub next_seq: u64,
}

impl Session {
    pub fn new(machine: &Machine) -> Self {
        Self::with_id(Uuid::new_v4(), machine)
    }

    pub fn with_id(id: Uuid, machine: &Machine) -> Self {
        let current_path = machine.initial_path();
        let logs = current_path.iter().map(|s| (s.clone(), Vec::new())).collect();
        Self {
            id,
            status: Status::Created,
            current_path,
            logs,
            storage: InteractionStorage::default(),
            history: BTreeMap::new(),
            next_seq: 0,
        }
    }

    /// Back to the initial configuration, keeping the id.
    pub fn reset(&mut self, machine: &Machine) {
        *self = Self::with_id(self.id, machine);
    }

    pub fn leaf(&self) -> &str {
        self.current_path.last().expect("path is never empty")
    }

    pub fn log(&self, state: &str) -> &[Utterance] {
        self.logs.get(state).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The whole conversation ordered by sequence number.
    pub fn conversation(&self) -> Vec<Utterance> {
        merge_by_seq(self.logs.values().map(Vec::as_slice))
    }

    fn validate(&self, machine: &Machine) -> Result<(), String> {
        let leaf = self.current_path.last().ok_or("empty current path")?;
        if !machine.contains(leaf) {
            return Err(format!("unknown state `{leaf}`"));
        }
        if machine.path_to(leaf) != self.current_path {
            return Err("current path is not a containment chain".into());
        }
        if machine.state(leaf).is_outer() {
            return Err(format!("active state `{leaf}` is an outer state"));
        }
        if let Some(name) = self.logs.keys().find(|n| !machine.contains(n)) {
            return Err(format!("log for unknown state `{name}`"));
        }
        Ok(())
    }
}

/// Reads a YES/NO completion, ignoring case, whitespace and surrounding
/// punctuation.
pub fn parse_decision(completion: &str) -> Option<bool> {
    let word = completion
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_uppercase();
    match word.as_str() {
        "YES" => Some(true),
        "NO" => Some(false),
        _ => None,
    }
}

/// Evaluates decisions and executes actions against a backend and registry.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub backend: &'a dyn LmBackend,
    pub registry: &'a Registry,
    pub decode: DecodeParams,
}

impl Evaluator<'_> {
    pub fn complete(&self, prompt: &ComposedPrompt) -> Result<String, LmError> {
        self.backend
            .complete(&LmRequest::from_composed(prompt, self.decode))
    }

    pub fn evaluate_decision(
        &self,
        decision: &Decision,
        utterances: &[Utterance],
        storage: &InteractionStorage,
    ) -> Result<bool, EngineError> {
        let prompt = match decision {
            Decision::StaticPrompt(t) => t.as_str().to_owned(),
            Decision::DynamicPrompt(t) => t.render(storage)?,
            Decision::Predicate(id) => {
                let predicate = self
                    .registry
                    .predicate(id)
                    .ok_or_else(|| EngineError::UnknownPredicate(id.clone()))?;
                return Ok(predicate(utterances, storage));
            }
        };
        let reply = self.complete(&compose_decision(&prompt, utterances))?;
        parse_decision(&reply).ok_or(EngineError::UnparsableDecision(reply))
    }

    pub fn execute_action(
        &self,
        action: &Action,
        utterances: &[Utterance],
        storage: &mut InteractionStorage,
    ) -> Result<(), EngineError> {
        let (prompt, key) = match action {
            Action::StaticExtraction {
                template,
                storage_key,
            } => (template.as_str().to_owned(), storage_key),
            Action::DynamicExtraction {
                template,
                storage_key,
            } => (template.render(storage)?, storage_key),
            Action::Effect(id) => {
                let effect = self
                    .registry
                    .effect(id)
                    .ok_or_else(|| EngineError::UnknownEffect(id.clone()))?;
                effect(utterances, storage);
                return Ok(());
            }
        };
        let value = self.complete(&compose_action(&prompt, utterances))?;
        storage.set(key.clone(), value);
        Ok(())
    }
}

/// A transition chosen by [`Agent::check_transitions`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fired {
    pub state: String,
    pub transition: usize,
}

/// A running conversation over a machine.
pub struct Agent {
    machine: Arc<Machine>,
    backend: Arc<dyn LmBackend>,
    registry: Arc<Registry>,
    session: Session,
    decode: DecodeParams,
}

impl Agent {
    pub fn new(machine: Arc<Machine>, backend: Arc<dyn LmBackend>, registry: Arc<Registry>) -> Self {
        let session = Session::new(&machine);
        Self {
            machine,
            backend,
            registry,
            session,
            decode: DecodeParams::default(),
        }
    }

    /// Continues a persisted session.
    pub fn resume(
        machine: Arc<Machine>,
        backend: Arc<dyn LmBackend>,
        registry: Arc<Registry>,
        session: Session,
    ) -> Result<Self, EngineError> {
        session.validate(&machine).map_err(EngineError::InvalidSession)?;
        Ok(Self {
            machine,
            backend,
            registry,
            session,
            decode: DecodeParams::default(),
        })
    }

    pub fn with_decode_params(mut self, decode: DecodeParams) -> Self {
        self.decode = decode;
        self
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    pub fn storage(&self) -> &InteractionStorage {
        &self.session.storage
    }

    pub fn storage_mut(&mut self) -> &mut InteractionStorage {
        &mut self.session.storage
    }

    pub fn status(&self) -> Status {
        self.session.status
    }

    pub fn current_path(&self) -> &[String] {
        &self.session.current_path
    }

    pub fn conversation(&self) -> Vec<Utterance> {
        self.session.conversation()
    }

    /// Clears logs, history and storage and returns to the initial states.
    pub fn reset(&mut self) {
        self.session.reset(&self.machine);
    }

    fn evaluator(&self) -> Evaluator<'_> {
        Evaluator {
            backend: self.backend.as_ref(),
            registry: self.registry.as_ref(),
            decode: self.decode,
        }
    }

    /// Runs `op` and rolls the session back if it fails.
    fn atomically<T>(
        &mut self,
        op: impl FnOnce(&mut Self) -> Result<T, EngineError>,
    ) -> Result<T, EngineError> {
        let snapshot = self.session.clone();
        let result = op(self);
        if result.is_err() {
            self.session = snapshot;
        }
        result
    }

    /// Lets the system open the conversation in the initial state.
    pub fn start(&mut self) -> Result<Utterance, EngineError> {
        match self.session.status {
            Status::Created => {}
            Status::Active => return Err(EngineError::AlreadyStarted),
            Status::Ended => return Err(EngineError::InteractionEnded),
        }
        self.atomically(|agent| {
            let leaf = agent.session.leaf().to_owned();
            let node = agent.machine.state(&leaf);
            if !node.flags.starts_conversation || node.starter_prompt.is_none() {
                return Err(EngineError::NotAStarterState(leaf));
            }
            let utterance = agent.entry_utterance(&leaf)?;
            agent.session.status = Status::Active;
            Ok(utterance.expect("starter prompt checked above"))
        })
    }

    /// Handles one user utterance and returns the agent's reply, if any.
    ///
    /// A transition into a state without a starter prompt, or back into an
    /// outer state through its history, yields no reply.
    pub fn respond(&mut self, user_input: &str) -> Result<Option<Utterance>, EngineError> {
        if self.session.status == Status::Ended {
            return Err(EngineError::InteractionEnded);
        }
        self.atomically(|agent| {
            agent.session.status = Status::Active;
            let leaf = agent.session.leaf().to_owned();
            agent.record(&leaf, Role::User, user_input.to_owned());

            let Some(mut fired) = agent.check_transitions()? else {
                return agent.generate_response().map(Some);
            };
            let mut reply = None;
            let mut automatic = 0;
            loop {
                if let Some(u) = agent.fire(&fired)? {
                    reply = Some(u);
                }
                if agent.session.status == Status::Ended {
                    break;
                }
                let leaf = agent.machine.state(agent.session.leaf());
                if !leaf.flags.auto_transit {
                    break;
                }
                match agent.check_transitions()? {
                    Some(next) => {
                        automatic += 1;
                        if automatic > AUTO_TRANSIT_CAP {
                            return Err(EngineError::CycleLimitExceeded(AUTO_TRANSIT_CAP));
                        }
                        fired = next;
                    }
                    None => break,
                }
            }
            Ok(reply)
        })
    }

    /// Utterances the given state's decisions and actions look at: its own log
    /// for a leaf, the merged logs of everything it contains for an outer state.
    pub fn scope_utterances(&self, state: &str) -> Vec<Utterance> {
        if self.machine.state(state).is_outer() {
            self.outer_utterances(state)
        } else {
            self.session.log(state).to_vec()
        }
    }

    /// Seq-ordered merge of the logs of every state inside `outer`.
    pub fn outer_utterances(&self, outer: &str) -> Vec<Utterance> {
        merge_by_seq(
            self.machine
                .descendants(outer)
                .into_iter()
                .map(|s| self.session.log(s)),
        )
    }

    /// Finds the first transition to follow, checking the active states from
    /// the innermost outwards and each state's transitions in order.
    pub fn check_transitions(&self) -> Result<Option<Fired>, EngineError> {
        let eval = self.evaluator();
        for state in self.session.current_path.iter().rev() {
            let node = self.machine.state(state);
            if node.transitions.is_empty() {
                continue;
            }
            let view = self.scope_utterances(state);
            for (index, transition) in node.transitions.iter().enumerate() {
                if self.decisions_pass(&eval, transition, &view)? {
                    tracing::debug!(state = %state, transition = index, "transition fires");
                    return Ok(Some(Fired {
                        state: state.clone(),
                        transition: index,
                    }));
                }
            }
        }
        Ok(None)
    }

    fn decisions_pass(
        &self,
        eval: &Evaluator<'_>,
        transition: &Transition,
        view: &[Utterance],
    ) -> Result<bool, EngineError> {
        for decision in &transition.decisions {
            if !eval.evaluate_decision(decision, view, &self.session.storage)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn fire(&mut self, fired: &Fired) -> Result<Option<Utterance>, EngineError> {
        let machine = Arc::clone(&self.machine);
        let transition = &machine.state(&fired.state).transitions[fired.transition];
        let view = self.scope_utterances(&fired.state);
        let eval = Evaluator {
            backend: self.backend.as_ref(),
            registry: self.registry.as_ref(),
            decode: self.decode,
        };
        for action in &transition.actions {
            eval.execute_action(action, &view, &mut self.session.storage)?;
        }
        self.transit(&fired.state, &transition.target, &view)
    }

    fn transit(
        &mut self,
        firing: &str,
        target: &Target,
        view: &[Utterance],
    ) -> Result<Option<Utterance>, EngineError> {
        let machine = Arc::clone(&self.machine);
        let depth = self
            .session
            .current_path
            .iter()
            .position(|s| s == firing)
            .expect("firing state is active");

        match target {
            Target::Final => {
                let chain = self.prompt_chain(firing)?;
                let prompt = compose_closing(&chain, view);
                let content = self.evaluator().complete(&prompt)?;
                let leaf = self.session.leaf().to_owned();
                let closing = self.record(&leaf, Role::Agent, content);
                self.session.status = Status::Ended;
                Ok(Some(closing))
            }
            Target::State(name) => {
                if machine.parent(name) != machine.parent(firing) || !machine.contains(name) {
                    return Err(EngineError::UnresolvedTarget(name.clone()));
                }
                self.exit_below(depth);
                let entered = machine.initial_descent(name);
                for state in &entered {
                    let log = self.session.logs.entry(state.clone()).or_default();
                    if machine.state(state).flags.oblivious {
                        log.clear();
                    }
                }
                self.session.current_path.extend(entered);
                let leaf = self.session.leaf().to_owned();
                self.entry_utterance(&leaf)
            }
            Target::History(outer) => {
                if !machine.contains(outer) || machine.parent(outer) != machine.parent(firing) {
                    return Err(EngineError::UnresolvedTarget(outer.clone()));
                }
                let resumes_with_reply = machine.state(firing).flags.auto_transit;
                self.exit_below(depth);
                let mut resumed = vec![outer.clone()];
                let mut cursor: &StateNode = machine.state(outer);
                while cursor.is_outer() {
                    let child = self
                        .session
                        .history
                        .get(&cursor.name)
                        .cloned()
                        .ok_or_else(|| EngineError::NoHistoryRecorded(cursor.name.clone()))?;
                    cursor = machine.state(&child);
                    resumed.push(child);
                }
                self.session.current_path.extend(resumed);
                if resumes_with_reply {
                    self.generate_response().map(Some)
                } else {
                    Ok(None)
                }
            }
        }
    }

    /// Leaves every active state from `depth` down, remembering the active
    /// child of each outer state that is left.
    fn exit_below(&mut self, depth: usize) {
        let exited = self.session.current_path.split_off(depth);
        for pair in exited.windows(2) {
            self.session.history.insert(pair[0].clone(), pair[1].clone());
        }
    }

    /// Rendered prompts of the enclosing outer states and the state itself.
    fn prompt_chain(&self, state: &str) -> Result<Vec<String>, EngineError> {
        let outers = self
            .machine
            .ancestors(state)
            .into_iter()
            .map(|s| &self.machine.state(s).state_prompt);
        Ok(effective_state_prompt_chain(
            outers,
            &self.machine.state(state).state_prompt,
            &self.session.storage,
        )?)
    }

    fn entry_utterance(&mut self, leaf: &str) -> Result<Option<Utterance>, EngineError> {
        let Some(starter) = &self.machine.state(leaf).starter_prompt else {
            return Ok(None);
        };
        let starter = starter.render(&self.session.storage)?;
        let chain = self.prompt_chain(leaf)?;
        let content = self.evaluator().complete(&compose_starter(&chain, &starter))?;
        Ok(Some(self.record(leaf, Role::Agent, content)))
    }

    fn generate_response(&mut self) -> Result<Utterance, EngineError> {
        let leaf = self.session.leaf().to_owned();
        let chain = self.prompt_chain(&leaf)?;
        let prompt = compose_response(&chain, self.session.log(&leaf));
        let content = self.evaluator().complete(&prompt)?;
        Ok(self.record(&leaf, Role::Agent, content))
    }

    fn record(&mut self, state: &str, role: Role, content: String) -> Utterance {
        let utterance = Utterance {
            seq: self.session.next_seq,
            role,
            state: state.to_owned(),
            content,
        };
        self.session.next_seq += 1;
        self.session
            .logs
            .entry(state.to_owned())
            .or_default()
            .push(utterance.clone());
        utterance
    }
}
