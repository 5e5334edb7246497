//! `maestro`: operator command line for the judge.
//!
//! Every command is non-interactive. Results go to stdout; failures print one
//! JSON line `{"error":{"kind":…,"message":…}}` to stderr and exit 1. Usage
//! errors exit 2.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maestro_arena::board::{board_view, error_view, BoardQuery, SortDir};
use maestro_arena::clock::ClockMode;
use maestro_arena::config::CONFIG_ENV;
use maestro_arena::export::export_csv;
use maestro_arena::records::{Payload, Role};
use maestro_arena::setup::{gen_data, train_hidden};
use maestro_arena::{Arena, ArenaError, Config, Outcome};
use maestro_client::{ApiClient, ClientError};
use maestro_core::oracle::Capability;
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "maestro", version, about = "Judge for adversarial attack and defense competitions")]
struct Cli {
    /// Config file; falls back to $MAESTRO_CONFIG.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the desk config to PATH.
    InitConfig {
        path: PathBuf,
        /// Data directory, relative to the config file unless absolute.
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Deterministic timestamps and zero durations.
        #[arg(long)]
        frozen_clock: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Materialize the configured dataset as IDX files.
    GenData,
    /// Train and save the hidden models.
    TrainHidden,
    /// Serve the HTTP API and evaluate submissions in the background.
    Serve {
        #[arg(long, env = "MAESTRO_HOST")]
        host: Option<String>,
        #[arg(long, env = "MAESTRO_PORT")]
        port: Option<u16>,
    },
    /// Register a built-in method and print its submission id.
    SubmitRef {
        role: RoleArg,
        method: String,
        #[command(flatten)]
        target: Target,
    },
    /// Register an external program and print its submission id.
    SubmitExt {
        role: RoleArg,
        program: String,
        /// Arguments passed to the program.
        #[arg(last = true)]
        args: Vec<String>,
        /// Oracle access for an external attack.
        #[arg(long, value_enum, default_value = "black-box")]
        capability: CapabilityArg,
        #[command(flatten)]
        target: Target,
    },
    /// Evaluate one submission, or every pending one.
    Evaluate {
        #[arg(required_unless_present = "pending")]
        id: Option<u64>,
        #[arg(long, conflicts_with = "id")]
        pending: bool,
        /// Evaluate again even if a record exists.
        #[arg(long)]
        force: bool,
    },
    /// Run the war tournament of a war phase.
    War { phase: String },
    /// Write a phase's CSV export to PATH (`-` for stdout).
    Export {
        phase: String,
        path: PathBuf,
        #[arg(long)]
        server: Option<String>,
    },
    /// Print a results board as JSON.
    Board {
        phase: String,
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Print an error board as JSON.
    Errors {
        phase: String,
        #[command(flatten)]
        query: QueryArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoleArg {
    Attack,
    Defense,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Attack => Role::Attack,
            RoleArg::Defense => Role::Defense,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CapabilityArg {
    BlackBox,
    WhiteBox,
}

#[derive(Debug, Args)]
struct Target {
    /// Defaults to the first configured submitter.
    #[arg(long)]
    submitter: Option<String>,
    /// Defaults to the first phase of the role's kind.
    #[arg(long)]
    phase: Option<String>,
    /// Submit through a running service instead of the local store.
    #[arg(long)]
    server: Option<String>,
    /// With --server, wait for the evaluation and print its status.
    #[arg(long, requires = "server")]
    wait: bool,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    sort: Option<String>,
    #[arg(long)]
    dir: Option<String>,
    #[arg(long)]
    search: Option<String>,
    #[arg(long)]
    submitter: Option<String>,
    /// Comma-separated metric keys.
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    offset: usize,
    #[arg(long)]
    server: Option<String>,
}

impl QueryArgs {
    fn params(&self) -> Vec<(&'static str, String)> {
        let mut p = Vec::new();
        let fields = [
            ("sort", &self.sort),
            ("dir", &self.dir),
            ("search", &self.search),
            ("submitter", &self.submitter),
            ("metrics", &self.metrics),
        ];
        for (k, v) in fields {
            if let Some(v) = v {
                p.push((k, v.clone()));
            }
        }
        if let Some(l) = self.limit {
            p.push(("limit", l.to_string()));
        }
        p.push(("offset", self.offset.to_string()));
        p
    }

    fn board_query(&self) -> Result<BoardQuery, CliError> {
        Ok(BoardQuery {
            sort: self.sort.clone(),
            dir: self.dir.as_deref().map(str::parse::<SortDir>).transpose()?,
            search: self.search.clone(),
            submitter: self.submitter.clone(),
            metrics: self.metrics.as_ref().map(|m| m.split(',').map(|k| k.trim().to_string()).filter(|k| !k.is_empty()).collect()),
            limit: self.limit,
            offset: self.offset,
        })
    }
}

#[derive(Debug)]
enum CliError {
    Arena(ArenaError),
    Client(ClientError),
    Io(std::io::Error),
    Usage(String),
}

impl From<ArenaError> for CliError {
    fn from(e: ArenaError) -> Self {
        CliError::Arena(e)
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        CliError::Client(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn to_json(&self) -> Value {
        match self {
            CliError::Arena(e) => {
                let mut body = json!({ "kind": e.kind(), "message": e.to_string() });
                if let ArenaError::Config { pointer, .. } = e {
                    body["pointer"] = json!(pointer);
                }
                json!({ "error": body })
            }
            CliError::Client(ClientError::Api { status, kind, message, .. }) => {
                json!({ "error": { "kind": kind, "message": message, "status": status } })
            }
            CliError::Client(e) => json!({ "error": { "kind": "transport", "message": e.to_string() } }),
            CliError::Io(e) => json!({ "error": { "kind": "io", "message": e.to_string() } }),
            CliError::Usage(m) => json!({ "error": { "kind": "usage", "message": m } }),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn load_config(cli: &Cli) -> CliResult<Config> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("no config file; pass --config or set {CONFIG_ENV}")))?;
    let mut config = Config::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn default_phase(config: &Config, role: Role) -> CliResult<String> {
    use maestro_arena::records::PhaseKind;
    let kind = match role {
        Role::Attack => PhaseKind::Attack,
        Role::Defense => PhaseKind::Defense,
    };
    config
        .phases
        .iter()
        .find(|p| p.kind == kind)
        .map(|p| p.name.clone())
        .ok_or_else(|| CliError::Usage(format!("no {} phase configured; pass --phase", role.as_str())))
}

fn submit(cli: &Cli, role: Role, payload: Payload, target: &Target) -> CliResult {
    if let Some(server) = &target.server {
        let client = ApiClient::new(server)?;
        let phase = match &target.phase {
            Some(p) => p.clone(),
            None => default_phase(&Config::from_json(&client.config()?.to_string())?, role)?,
        };
        let submitter = match &target.submitter {
            Some(s) => s.clone(),
            None => client.config()?["submitters"][0]["id"].as_str().unwrap_or_default().to_string(),
        };
        let submission = client.submit(&submitter, &phase, &payload)?;
        if target.wait {
            print_json(&client.wait(submission.id, Duration::from_secs(3600))?);
        } else {
            println!("{}", submission.id);
        }
        return Ok(());
    }
    let config = load_config(cli)?;
    let phase = match &target.phase {
        Some(p) => p.clone(),
        None => default_phase(&config, role)?,
    };
    let submitter = match &target.submitter {
        Some(s) => s.clone(),
        None => config.submitters.first().map(|s| s.id.clone()).ok_or_else(|| CliError::Usage("no submitters configured".into()))?,
    };
    let arena = Arena::open(config)?;
    println!("{}", arena.submit(&submitter, &phase, payload)?.id);
    Ok(())
}

fn outcome_json(outcome: &Outcome) -> Value {
    match outcome {
        Outcome::Evaluated(r) => json!({ "status": "evaluated", "evaluation": r }),
        Outcome::Failed(r) => json!({ "status": "failed", "error": r }),
    }
}

fn write_output(path: &Path, text: &str) -> CliResult {
    if path == Path::new("-") {
        std::io::stdout().write_all(text.as_bytes())?;
    } else {
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::InitConfig { path, data_dir, frozen_clock, workers } => {
            let mut config = Config::desk(data_dir);
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            if *frozen_clock {
                config.timing.clock = ClockMode::Frozen;
            }
            if let Some(w) = workers {
                config.workers = *w;
            }
            config.validate()?;
            std::fs::write(path, config.to_json() + "\n")?;
            println!("{}", path.display());
        }
        Command::GenData => print_json(&gen_data(&load_config(cli)?)?),
        Command::TrainHidden => print_json(&train_hidden(&load_config(cli)?)?),
        Command::Serve { host, port } => {
            let config = load_config(cli)?;
            let host = host.clone().unwrap_or_else(|| config.server.host.clone());
            let port = port.unwrap_or(config.server.port);
            tracing_subscriber::fmt()
                .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
                .with_writer(std::io::stderr)
                .init();
            let arena = Arc::new(Arena::open(config)?);
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                maestro_server::serve(arena, listener).await
            })?;
        }
        Command::SubmitRef { role, method, target } => {
            let role = Role::from(*role);
            submit(cli, role, Payload::Reference { role, method: method.clone() }, target)?;
        }
        Command::SubmitExt { role, program, args, capability, target } => {
            let role = Role::from(*role);
            let capability = match capability {
                CapabilityArg::BlackBox => Capability::BlackBox,
                CapabilityArg::WhiteBox => Capability::WhiteBox,
            };
            let payload = Payload::External { role, program: program.clone(), args: args.clone(), capability };
            submit(cli, role, payload, target)?;
        }
        Command::Evaluate { id, pending, force } => {
            let arena = Arena::open(load_config(cli)?)?;
            if *pending {
                let outcomes = arena.evaluate_pending()?;
                print_json(&outcomes.iter().map(outcome_json).collect::<Vec<_>>());
            } else {
                let id = id.expect("clap requires an id without --pending");
                print_json(&outcome_json(&arena.evaluate(id, *force)?));
            }
        }
        Command::War { phase } => {
            let arena = Arena::open(load_config(cli)?)?;
            print_json(&arena.run_war(phase)?);
        }
        Command::Export { phase, path, server } => {
            let text = match server {
                Some(s) => ApiClient::new(s)?.csv(phase)?,
                None => {
                    let arena = Arena::open(load_config(cli)?)?;
                    export_csv(arena.config(), &arena.snapshot(), phase)?
                }
            };
            write_output(path, &text)?;
        }
        Command::Board { phase, query } => match &query.server {
            Some(s) => print_json(&ApiClient::new(s)?.board(phase, &query.params())?),
            None => {
                let arena = Arena::open(load_config(cli)?)?;
                print_json(&board_view(arena.config(), &arena.snapshot(), phase, &query.board_query()?)?);
            }
        },
        Command::Errors { phase, query } => match &query.server {
            Some(s) => print_json(&ApiClient::new(s)?.errors(phase, &query.params())?),
            None => {
                let arena = Arena::open(load_config(cli)?)?;
                print_json(&error_view(arena.config(), &arena.snapshot(), phase, &query.board_query()?)?);
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("{}", CliError::Usage(m).to_json());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
