#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use statechat_core::lm::{LmBackend, ScriptEntry, ScriptedBackend};
use statechat_core::scenario::{agent_for, ScenarioFiles};
use statechat_core::{Agent, Decision, Machine, PromptTemplate, Registry, StateNode, Target, Transition};

pub fn scenario_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(scenario_dir(name).join("transcript.golden.jsonl")).unwrap()
}

pub fn tpl(s: &str) -> PromptTemplate {
    PromptTemplate::new(s).unwrap()
}

pub fn yes_no(prompt: &str) -> Decision {
    Decision::StaticPrompt(tpl(prompt))
}

pub fn transition(decisions: Vec<Decision>, target: Target) -> Transition {
    Transition {
        decisions,
        actions: vec![],
        target,
    }
}

pub fn machine(initial: &str, states: Vec<StateNode>) -> Arc<Machine> {
    Arc::new(Machine::build(initial, states, &Registry::with_builtins()).unwrap())
}

pub fn agent(machine: Arc<Machine>, script: Vec<ScriptEntry>) -> (Agent, Arc<ScriptedBackend>) {
    let backend = Arc::new(ScriptedBackend::new(script));
    let agent = Agent::new(
        machine,
        backend.clone() as Arc<dyn LmBackend>,
        Arc::new(Registry::with_builtins()),
    );
    (agent, backend)
}

/// Agent and backend for a committed scenario directory.
pub fn scenario_agent(name: &str) -> (Agent, Arc<ScriptedBackend>, ScenarioFiles) {
    let files = ScenarioFiles::load(scenario_dir(name)).unwrap();
    let backend = Arc::new(ScriptedBackend::new(files.script.clone()));
    let agent = agent_for(
        &files.spec(),
        backend.clone() as Arc<dyn LmBackend>,
        Arc::new(Registry::with_builtins()),
    )
    .unwrap();
    (agent, backend, files)
}
