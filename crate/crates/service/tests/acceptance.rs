//! Acceptance run: one PASS/FAIL line per criterion. Every comparison is an
//! exact equality (tolerance 0); the scripted backend makes all runs
//! deterministic.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;

use axum::http::{Method, StatusCode};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;
use serde_json::Value;

use common::*;
use statechat_core::lm::{LmBackend, ScriptEntry, ScriptedBackend};
use statechat_core::scenario::{agent_for, drive};
use statechat_core::transcript::to_jsonl;
use statechat_core::{
    Agent, Decision, Fired, Machine, MachineSpec, PromptTemplate, Registry, Role, StateNode,
    Status, Target, Transition, Utterance,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

macro_rules! ensure_eq {
    ($left:expr, $right:expr, $what:expr) => {{
        let (l, r) = (&$left, &$right);
        if l != r {
            return Err(format!("{}: {:?} != {:?}", $what, l, r));
        }
    }};
}

fn registry() -> Arc<Registry> {
    Arc::new(Registry::with_builtins())
}

fn tpl(s: &str) -> PromptTemplate {
    PromptTemplate::new(s).unwrap()
}

fn yes_no(prompt: &str) -> Decision {
    Decision::StaticPrompt(tpl(prompt))
}

fn go(decisions: Vec<Decision>, target: Target) -> Transition {
    Transition {
        decisions,
        actions: vec![],
        target,
    }
}

fn build(initial: &str, states: Vec<StateNode>) -> Arc<Machine> {
    Arc::new(Machine::build(initial, states, &registry()).unwrap())
}

fn agent(machine: Arc<Machine>, script: Vec<ScriptEntry>) -> (Agent, Arc<ScriptedBackend>) {
    let backend = Arc::new(ScriptedBackend::new(script));
    let agent = Agent::new(machine, backend.clone() as Arc<dyn LmBackend>, registry());
    (agent, backend)
}

fn run_scenario(spec: &MachineSpec, script: Vec<ScriptEntry>) -> (Agent, Arc<ScriptedBackend>) {
    let backend = Arc::new(ScriptedBackend::new(script));
    let agent = agent_for(spec, backend.clone() as Arc<dyn LmBackend>, registry()).unwrap();
    (agent, backend)
}

fn seq_sorted_union(agent: &Agent, states: &[&str]) -> Vec<Utterance> {
    let mut all: Vec<Utterance> = states
        .iter()
        .flat_map(|s| agent.session().log(s).to_vec())
        .collect();
    all.sort_by_key(|u| u.seq);
    all
}

fn daily_checkin() -> Outcome {
    let files = scenario("daily_checkin");
    let (mut agent, backend) = run_scenario(&files.spec(), files.script.clone());
    drive(&mut agent, &files.inputs).map_err(|e| e.to_string())?;
    let transcript = agent.conversation();
    ensure_eq!(to_jsonl(&transcript), golden("daily_checkin"), "transcript");
    ensure_eq!(transcript.len(), 5, "turn count");
    let roles: Vec<Role> = transcript.iter().map(|u| u.role).collect();
    ensure_eq!(
        roles,
        [Role::Agent, Role::User, Role::Agent, Role::User, Role::Agent],
        "roles"
    );
    ensure!(
        transcript.iter().all(|u| u.state == "DailyCheckIn"),
        "state attribution"
    );
    // oracle: the scripted reply of the extraction request
    let scripted_summary = files
        .script
        .iter()
        .find(|e| serde_json::from_str::<Value>(&e.reply).is_ok_and(|v| v.is_object()))
        .map(|e| e.reply.clone())
        .ok_or("script has no JSON summary")?;
    ensure_eq!(agent.storage().get("summary"), Some(scripted_summary.as_str()), "summary");
    let summary: Value = serde_json::from_str(&scripted_summary).unwrap();
    let mut keys: Vec<&String> = summary.as_object().unwrap().keys().collect();
    keys.sort();
    ensure_eq!(keys, ["adherence", "wellbeing"], "summary keys");
    ensure_eq!(agent.status(), Status::Ended, "status");
    ensure!(backend.consumed().iter().all(|c| *c), "unused script entries");
    Ok("5 turns, storage summary and status exact".into())
}

fn fragment() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 .,;:!?'\"()-]{1,40}"
}

/// Nested outer states whose prompts are `chain[..n-1]`, with a leaf holding
/// the last fragment and a starter.
fn nested(chain: &[String], starter: &str) -> Arc<Machine> {
    let depth = chain.len();
    let mut node = StateNode::new(format!("S{}", depth - 1), tpl(&chain[depth - 1]))
        .with_starter(tpl(starter));
    for level in (0..depth - 1).rev() {
        let inner_name = node.name.clone();
        node = StateNode::new(format!("S{level}"), tpl(&chain[level])).with_inner(inner_name, vec![node]);
    }
    let name = node.name.clone();
    build(&name, vec![node])
}

fn newline_join(parts: &[String]) -> String {
    let mut out = String::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(p);
    }
    out
}

fn composition() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let sets = (proptest::collection::vec(fragment(), 1..5), fragment());
    for i in 0..20 {
        let (chain, starter) = sets.new_tree(&mut runner).unwrap().current();
        let (mut agent, backend) = agent(
            nested(&chain, &starter),
            vec![ScriptEntry::substring("", "ok").repeating()],
        );
        agent.start().map_err(|e| e.to_string())?;
        agent.respond("next").map_err(|e| e.to_string())?;
        let requests = backend.requests();
        let mut with_starter = chain.clone();
        with_starter.push(starter);
        ensure_eq!(requests[0].system_part, newline_join(&with_starter), format!("set {i} starter"));
        ensure_eq!(requests[1].system_part, newline_join(&chain), format!("set {i} response"));
    }

    let m = build(
        "Outer",
        vec![StateNode::new("Outer", tpl("outer")).with_inner(
            "Inner",
            vec![StateNode::new("Inner", tpl("inner")).with_starter(tpl("start"))],
        )],
    );
    let (mut a, backend) = agent(m, vec![ScriptEntry::substring("", "ok").repeating()]);
    a.start().map_err(|e| e.to_string())?;
    a.respond("hi").map_err(|e| e.to_string())?;
    let requests = backend.requests();
    ensure_eq!(requests[0].system_part, "outer\ninner\nstart", "2-deep starter");
    ensure_eq!(requests[1].system_part, "outer\ninner", "2-deep chain");
    Ok("20/20 randomized sets byte-identical; 2-deep chain [outer, inner]".into())
}

fn transition_semantics() -> Outcome {
    let single = |transitions: Vec<Transition>| {
        let mut s = StateNode::new("S", tpl("p"));
        s.transitions = transitions;
        build("S", vec![s])
    };
    let guarded = || single(vec![go(vec![yes_no("trigger"), yes_no("guard")], Target::Final)]);

    // (a) short-circuit conjunction
    let (a, backend) = agent(
        guarded(),
        vec![
            ScriptEntry::substring("trigger", "NO"),
            ScriptEntry::substring("guard", "YES"),
        ],
    );
    ensure_eq!(a.check_transitions().map_err(|e| e.to_string())?, None, "(a) fired");
    ensure_eq!(backend.consumed(), [true, false], "(a) guard consumption");
    let (a, backend) = agent(
        guarded(),
        vec![
            ScriptEntry::substring("trigger", "YES"),
            ScriptEntry::substring("guard", "NO"),
        ],
    );
    ensure_eq!(a.check_transitions().map_err(|e| e.to_string())?, None, "(a) guard NO fired");
    ensure_eq!(backend.request_count(), 2, "(a) requests");

    // (b) innermost first
    let m = build(
        "Outer",
        vec![StateNode::new("Outer", tpl("o"))
            .with_transition(go(vec![yes_no("outer decision")], Target::Final))
            .with_inner(
                "Inner",
                vec![
                    StateNode::new("Inner", tpl("i"))
                        .with_transition(go(vec![yes_no("inner decision")], Target::State("Next".into()))),
                    StateNode::new("Next", tpl("n")),
                ],
            )],
    );
    let (a, backend) = agent(
        m,
        vec![
            ScriptEntry::substring("outer decision", "YES"),
            ScriptEntry::substring("inner decision", "YES"),
        ],
    );
    ensure_eq!(
        a.check_transitions().map_err(|e| e.to_string())?,
        Some(Fired {
            state: "Inner".into(),
            transition: 0
        }),
        "(b) fired"
    );
    ensure_eq!(backend.consumed(), [false, true], "(b) outer consumption");

    // (c) no transitions
    let (a, backend) = agent(single(vec![]), vec![]);
    ensure_eq!(a.check_transitions().map_err(|e| e.to_string())?, None, "(c) fired");
    ensure_eq!(backend.request_count(), 0, "(c) requests");
    Ok("(a) guard unconsumed, (b) outer unconsumed, (c) zero requests".into())
}

fn entry(matcher: &str, reply: &str) -> ScriptEntry {
    ScriptEntry::substring(matcher, reply)
}

fn therapy_coach() -> Outcome {
    let files = scenario("therapy_coach");
    let spec = files.spec();
    let (mut agent, _) = run_scenario(&spec, files.script.clone());
    drive(&mut agent, &files.inputs).map_err(|e| e.to_string())?;
    ensure_eq!(to_jsonl(&agent.conversation()), golden("therapy_coach"), "transcript");
    ensure_eq!(
        agent.outer_utterances("TherapyCoach"),
        seq_sorted_union(&agent, &["Reason", "Choice"]),
        "outer view"
    );

    let opening = &files.script[0];
    let closing = entry("Compose a single, short closing message", "Take care, Daniel.");
    let abort = entry("wants to pause or stop", "YES");

    // abort while the reason is being asked for
    let script = vec![
        opening.clone(),
        entry("valid reason for missing swimming", "NO"),
        abort.clone(),
        closing.clone(),
    ];
    let (mut agent, _) = run_scenario(&spec, script);
    agent.start().map_err(|e| e.to_string())?;
    let last = agent
        .respond("I'd rather stop for today.")
        .map_err(|e| e.to_string())?
        .ok_or("no closing message")?;
    ensure_eq!(agent.status(), Status::Ended, "abort from Reason status");
    ensure_eq!(last.state, "Reason", "abort from Reason attribution");

    // abort once the options are on the table
    let mut script: Vec<ScriptEntry> = files.script[..8].to_vec();
    script.push(entry("chosen exactly one of the offered options", "NO"));
    script.push(abort);
    script.push(closing);
    let (mut agent, _) = run_scenario(&spec, script);
    drive(&mut agent, &files.inputs[..2]).map_err(|e| e.to_string())?;
    ensure_eq!(agent.current_path(), ["TherapyCoach", "Choice"], "reached Choice");
    let last = agent
        .respond("Actually, let's stop here.")
        .map_err(|e| e.to_string())?
        .ok_or("no closing message")?;
    ensure_eq!(agent.status(), Status::Ended, "abort from Choice status");
    ensure_eq!(last.state, "Choice", "abort from Choice attribution");
    ensure!(agent.storage().get("suggestionChosen").is_none(), "choice extracted after abort");
    Ok("outer view equals seq-sorted union; abort ends from Reason and from Choice".into())
}

fn consultation_coach() -> Outcome {
    let files = scenario("compassion_coach");
    let (mut agent, _) = run_scenario(&files.spec(), files.script.clone());
    drive(&mut agent, &files.inputs).map_err(|e| e.to_string())?;
    ensure_eq!(to_jsonl(&agent.conversation()), golden("compassion_coach"), "transcript");
    let states: Vec<String> = agent.conversation().into_iter().map(|u| u.state).collect();
    ensure!(
        states.windows(2).any(|w| w == ["Simulation", "Feedback"])
            && states.windows(2).any(|w| w == ["Feedback", "Simulation"]),
        "no simulation/coaching interleaving: {states:?}"
    );

    // Without the automatic reply on resumption the simulation comes back
    // exactly as it was left.
    let mut spec_json: Value = serde_json::from_str(&files.spec_text).unwrap();
    for state in spec_json["states"].as_array_mut().unwrap() {
        if state["name"] == "Feedback" {
            state["auto_transit"] = Value::Bool(false);
        }
    }
    let variant = MachineSpec::from_json(&spec_json.to_string()).map_err(|d| d.to_string())?;
    let mut script = files.script.clone();
    // the arrival re-check only happens with automatic transit
    script.remove(4);
    let (mut agent, _) = run_scenario(&variant, script);
    agent.start().map_err(|e| e.to_string())?;
    let path_before = agent.current_path().to_vec();
    agent.respond(&files.inputs[0]).map_err(|e| e.to_string())?;
    ensure_eq!(agent.current_path(), ["Feedback"], "interjection");
    let log_before = agent.session().log("Simulation").to_vec();
    agent.respond(&files.inputs[1]).map_err(|e| e.to_string())?;
    let reply = agent.respond(&files.inputs[2]).map_err(|e| e.to_string())?;
    ensure_eq!(reply, None, "reply on resumption");
    ensure_eq!(agent.current_path(), path_before.as_slice(), "current path");
    ensure_eq!(agent.session().log("Simulation"), log_before.as_slice(), "simulation log");
    Ok("golden transcript exact; path and simulation log deep-equal after resumption".into())
}

fn reentry() -> Outcome {
    let cycle = |oblivious: bool| {
        build(
            "A",
            vec![
                StateNode::new("A", tpl("prompt A"))
                    .with_starter(tpl("enter A"))
                    .oblivious(oblivious)
                    .with_transition(go(vec![yes_no("leave A")], Target::State("B".into()))),
                StateNode::new("B", tpl("prompt B"))
                    .with_starter(tpl("enter B"))
                    .with_transition(go(vec![yes_no("leave B")], Target::State("A".into()))),
            ],
        )
    };
    let script = || {
        vec![
            entry("enter A", "in A").repeating(),
            entry("enter B", "in B").repeating(),
            entry("leave", "YES").repeating(),
        ]
    };
    let mut lengths = Vec::new();
    for oblivious in [true, false] {
        let (mut a, _) = agent(cycle(oblivious), script());
        a.start().map_err(|e| e.to_string())?;
        a.respond("to B").map_err(|e| e.to_string())?;
        let before = a.session().log("A").to_vec();
        a.respond("to A").map_err(|e| e.to_string())?;
        let log = a.session().log("A");
        if oblivious {
            // only the fresh entry utterance
            ensure_eq!(log.len(), 1, "oblivious log length");
            ensure!(log[0].seq > before.last().unwrap().seq, "old utterances kept");
        } else {
            ensure_eq!(&log[..before.len()], before.as_slice(), "retained log");
        }
        lengths.push(log.len());
    }
    Ok(format!("log on re-entry: oblivious {} entry, retaining {} entries", lengths[0], lengths[1]))
}

async fn rest() -> Outcome {
    let files = scenario("daily_checkin");
    let (mut engine_agent, _) = run_scenario(&files.spec(), files.script.clone());
    drive(&mut engine_agent, &files.inputs).map_err(|e| e.to_string())?;
    let engine = to_jsonl(&engine_agent.conversation());

    let backend = scripted(&files);
    let app = memory_app(backend.clone());
    let uuid = create(&app, &files.spec_text).await;
    replay(&app, &uuid, &files.inputs).await;
    let over_http = transcript(&app, &uuid).await;
    ensure_eq!(over_http, engine, "REST vs engine");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let db = dir.path().join("acceptance.db");
    let stub = scripted(&files);
    let restarted_uuid = create(&sqlite_app(&db, stub.clone()), &files.spec_text).await;
    let mut calls = 1;
    for input in std::iter::once("").chain(files.inputs.iter().map(String::as_str)) {
        let (status, body) = respond(&sqlite_app(&db, stub.clone()), &restarted_uuid, input).await;
        ensure_eq!(status, StatusCode::OK, format!("respond {body}"));
        calls += 1;
    }
    ensure_eq!(transcript(&sqlite_app(&db, stub), &restarted_uuid).await, engine, "after restarts");
    calls += 1;

    let (status, _) = call(&app, Method::PUT, &format!("/{uuid}/reset"), None).await;
    ensure_eq!(status, StatusCode::NO_CONTENT, "reset");
    backend.rewind();
    replay(&app, &uuid, &files.inputs).await;
    ensure_eq!(transcript(&app, &uuid).await, over_http, "rerun after reset");
    Ok(format!("equal to engine; fresh service for each of {calls} calls; reset rerun identical"))
}

fn validation() -> Outcome {
    let dir = scenario_dir("invalid");
    let expected: BTreeMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("expected_paths.json")).unwrap())
            .unwrap();
    ensure!(expected.len() >= 10, "corpus has only {} specs", expected.len());
    let reg = registry();
    for (name, path) in &expected {
        let text = std::fs::read_to_string(dir.join(format!("{name}.json"))).unwrap();
        let diagnostics = match MachineSpec::from_json(&text).and_then(|s| s.build(&reg)) {
            Ok(_) => return Err(format!("{name} validated clean")),
            Err(d) => d,
        };
        ensure!(
            diagnostics.0.iter().any(|d| &d.path == path),
            "{name}: wanted {path}, got {diagnostics}"
        );
    }
    for model in ["daily_checkin", "therapy_coach", "compassion_coach"] {
        let text = std::fs::read_to_string(scenario_dir(model).join("spec.json")).unwrap();
        MachineSpec::from_json(&text)
            .and_then(|s| s.build(&reg))
            .map_err(|d| format!("{model}: {d}"))?;
    }
    Ok(format!("{} malformed specs located; 3 models clean", expected.len()))
}

fn main() -> ExitCode {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("daily check-in scenario", Box::new(daily_checkin)),
        ("prompt composition exactness", Box::new(composition)),
        ("transition semantics", Box::new(transition_semantics)),
        ("nested therapy coach scenario", Box::new(therapy_coach)),
        ("consultation coach with history resumption", Box::new(consultation_coach)),
        ("oblivious vs retaining re-entry", Box::new(reentry)),
        ("REST equivalence, restart and reset", Box::new(|| runtime.block_on(rest()))),
        ("spec validation corpus", Box::new(validation)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name} [tolerance: exact] {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name} [tolerance: exact] {reason}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
