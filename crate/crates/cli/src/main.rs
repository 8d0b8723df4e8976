//! `statechat`: validate machine specs and run conversations against them.

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use statechat_core::lm::{HttpBackend, HttpConfig, LmBackend, ScriptedBackend};
use statechat_core::scenario::parse_inputs;
use statechat_core::transcript::write_jsonl;
use statechat_core::{Agent, EngineError, MachineSpec, Registry, Status};

#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check spec files; exits 0 only if every file is clean.
    Validate {
        #[arg(required = true)]
        specs: Vec<PathBuf>,
    },
    /// Run a conversation and print its transcript as JSON lines.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendChoice {
    Scripted,
    Http,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Canned model replies; implies the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// User inputs, one per line.
    #[arg(long, conflicts_with = "interactive")]
    inputs: Option<PathBuf>,
    /// Read user inputs from the terminal and echo the chat on stderr.
    #[arg(long)]
    interactive: bool,
    #[arg(long, value_enum)]
    backend: Option<BackendChoice>,
    /// Base URL of a chat-completions endpoint for the http backend.
    #[arg(long, default_value_t = HttpConfig::default().base_url)]
    lm_url: String,
    #[arg(long)]
    lm_model: Option<String>,
    /// Seed a storage entry, `key=value`; repeatable.
    #[arg(long = "storage", value_name = "KEY=VALUE", value_parser = parse_pair)]
    storage: Vec<(String, String)>,
    /// Write the final storage as JSON to FILE, or to stdout with `-`.
    #[arg(long, value_name = "FILE")]
    dump_storage: Option<PathBuf>,
}

fn parse_pair(raw: &str) -> Result<(String, String), String> {
    raw.split_once('=')
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {raw:?}"))
}

fn validate(specs: &[PathBuf]) -> anyhow::Result<bool> {
    let registry = Registry::with_builtins();
    let mut clean = true;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for path in specs {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        match MachineSpec::from_json(&text).and_then(|spec| spec.build(&registry)) {
            Ok(_) => writeln!(out, "{}: ok", path.display())?,
            Err(diagnostics) => {
                clean = false;
                for d in diagnostics.0 {
                    writeln!(out, "{}: {}: {}", path.display(), d.path, d.message)?;
                }
            }
        }
    }
    Ok(clean)
}

fn load_spec(path: &Path) -> anyhow::Result<MachineSpec> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    MachineSpec::from_json(&text).map_err(|d| anyhow::anyhow!("{}:\n{d}", path.display()))
}

fn backend(args: &RunArgs) -> anyhow::Result<Arc<dyn LmBackend>> {
    let choice = args.backend.unwrap_or(if args.script.is_some() {
        BackendChoice::Scripted
    } else {
        BackendChoice::Http
    });
    match choice {
        BackendChoice::Scripted => {
            let Some(script) = &args.script else {
                bail!("the scripted backend needs --script");
            };
            let backend = ScriptedBackend::from_file(script)
                .with_context(|| format!("loading script {}", script.display()))?;
            Ok(Arc::new(backend))
        }
        BackendChoice::Http => Ok(Arc::new(HttpBackend::new(HttpConfig {
            base_url: args.lm_url.clone(),
            model: args.lm_model.clone(),
            ..HttpConfig::default()
        }))),
    }
}

/// Source of user turns: a fixed list or the terminal.
enum Inputs {
    Listed(std::vec::IntoIter<String>),
    Terminal(io::StdinLock<'static>),
}

impl Inputs {
    fn next(&mut self) -> anyhow::Result<Option<String>> {
        match self {
            Inputs::Listed(it) => Ok(it.next()),
            Inputs::Terminal(stdin) => {
                eprint!("you> ");
                let mut line = String::new();
                if stdin.read_line(&mut line)? == 0 {
                    return Ok(None);
                }
                Ok(Some(line.trim_end_matches(['\r', '\n']).to_owned()))
            }
        }
    }
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let spec = load_spec(&args.spec)?;
    let registry = Arc::new(Registry::with_builtins());
    let machine = Arc::new(
        spec.build(&registry)
            .map_err(|d| anyhow::anyhow!("{}:\n{d}", args.spec.display()))?,
    );
    let mut agent = Agent::new(machine, backend(&args)?, registry);
    *agent.storage_mut() = spec.initial_storage();
    for (k, v) in &args.storage {
        agent.storage_mut().set(k.clone(), v.clone());
    }

    let mut inputs = if args.interactive {
        Inputs::Terminal(io::stdin().lock())
    } else {
        let lines = match &args.inputs {
            Some(path) => parse_inputs(
                &std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?,
            ),
            None => Vec::new(),
        };
        Inputs::Listed(lines.into_iter())
    };

    let result = converse(&mut agent, &mut inputs, args.interactive);

    let stdout = io::stdout();
    let mut out = stdout.lock();
    write_jsonl(&mut out, &agent.conversation())?;
    if let Some(path) = &args.dump_storage {
        let json = serde_json::to_string_pretty(agent.storage())?;
        if path.as_os_str() == "-" {
            writeln!(out, "{json}")?;
        } else {
            std::fs::write(path, format!("{json}\n"))
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    out.flush()?;
    result
}

fn converse(agent: &mut Agent, inputs: &mut Inputs, echo: bool) -> anyhow::Result<()> {
    let show = |state: &str, text: &str| {
        if echo {
            eprintln!("[{state}] agent> {text}");
        }
    };
    if agent.status() == Status::Created {
        let leaf = agent.machine().state(agent.session().leaf());
        if leaf.flags.starts_conversation {
            let u = agent.start().map_err(engine_failure)?;
            show(&u.state, &u.content);
        }
    }
    while agent.status() != Status::Ended {
        let Some(input) = inputs.next()? else { break };
        if let Some(u) = agent.respond(&input).map_err(engine_failure)? {
            show(&u.state, &u.content);
        }
    }
    Ok(())
}

fn engine_failure(e: EngineError) -> anyhow::Error {
    anyhow::Error::new(e).context("conversation aborted")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { specs } => validate(&specs),
        Command::Run(args) => run(args).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
