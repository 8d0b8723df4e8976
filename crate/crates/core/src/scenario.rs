//! Driving a conversation from a list of user inputs, plus loading of
//! scenario directories (`spec.json`, `script.json`, `inputs.txt`).

use std::path::Path;
use std::sync::Arc;

use crate::engine::{Agent, EngineError, Status};
use crate::lm::{LmBackend, ScriptEntry};
use crate::registry::Registry;
use crate::spec::{Diagnostics, MachineSpec};
use crate::utterance::Utterance;

/// One user input per non-empty line.
pub fn parse_inputs(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect()
}

/// Builds an agent for `spec` with its initial storage applied.
pub fn agent_for(
    spec: &MachineSpec,
    backend: Arc<dyn LmBackend>,
    registry: Arc<Registry>,
) -> Result<Agent, Diagnostics> {
    let machine = Arc::new(spec.build(&registry)?);
    let mut agent = Agent::new(machine, backend, registry);
    *agent.storage_mut() = spec.initial_storage();
    Ok(agent)
}

/// Opens the conversation when the initial state starts it, then feeds every
/// input in order. Returns the agent utterances produced along the way.
pub fn drive<S: AsRef<str>>(agent: &mut Agent, inputs: &[S]) -> Result<Vec<Utterance>, EngineError> {
    let mut produced = Vec::new();
    if agent.status() == Status::Created {
        let leaf = agent.machine().state(agent.session().leaf());
        if leaf.flags.starts_conversation {
            produced.push(agent.start()?);
        }
    }
    for input in inputs {
        if let Some(reply) = agent.respond(input.as_ref())? {
            produced.push(reply);
        }
    }
    Ok(produced)
}

/// The files of a scenario directory.
#[derive(Debug, Clone)]
pub struct ScenarioFiles {
    pub spec_text: String,
    pub script: Vec<ScriptEntry>,
    pub inputs: Vec<String>,
}

impl ScenarioFiles {
    pub fn load(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| std::fs::read_to_string(dir.join(name));
        let script = serde_json::from_str(&read("script.json")?)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self {
            spec_text: read("spec.json")?,
            script,
            inputs: parse_inputs(&read("inputs.txt")?),
        })
    }

    pub fn spec(&self) -> MachineSpec {
        MachineSpec::from_json(&self.spec_text).expect("scenario spec parses")
    }
}
