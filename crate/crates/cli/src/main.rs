//! Command-line client for the slicefab service.
//!
//! Exit status: 0 on success, 1 when an input or check fails validation,
//! 2 when the server refuses the request or cannot be reached.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use slicefab_client::{Client, ClientError, DEFAULT_SERVER, SERVER_ENV, TENANT_ENV};
use slicefab_core::api::{self, CreateFederationRequest, FederationRules, Fig6Request, ParseError};
use slicefab_core::bench::{render_svg, write_csv, BenchSample};
use slicefab_core::model::InstanceMode;
use slicefab_core::orchestrator::{DelegationGrant, Slice, SliceDelta};

#[derive(Parser)]
#[command(
    name = "slicefab",
    version,
    about = "Industrial network-slice orchestration client"
)]
struct Cli {
    /// Base URL of the service.
    #[arg(long, env = SERVER_ENV, default_value = DEFAULT_SERVER, global = true)]
    server: String,
    /// Tenant id sent with every request.
    #[arg(long, env = TENANT_ENV, global = true)]
    tenant: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Submit a slice blueprint.
    Request {
        blueprint: PathBuf,
        /// Poll until the admission decision has been carried out.
        #[arg(long)]
        wait: bool,
    },
    /// Show a slice's lifecycle state and placement.
    Status {
        id: String,
        #[arg(long)]
        json: bool,
    },
    /// Apply a delta file to an active slice.
    Reconfigure {
        id: String,
        delta: PathBuf,
    },
    Terminate {
        id: String,
    },
    /// Propose a federation link governed by a rules file.
    Federate {
        exporter: String,
        importer: String,
        rules: PathBuf,
    },
    /// Consent to a proposed federation link.
    Consent {
        link: String,
    },
    /// Grant management rights described in a JSON file.
    Delegate {
        grant: PathBuf,
    },
    /// Print the service's event log.
    Events,
    /// Run a benchmark on the service.
    #[command(subcommand)]
    Bench(Bench),
    /// Run an end-to-end use-case scenario.
    Scenario {
        name: ScenarioName,
    },
}

#[derive(Subcommand)]
enum Bench {
    /// Instantiation response time against running instances per node.
    Fig6 {
        #[arg(long, value_enum, default_value = "vf")]
        mode: Mode,
        /// Write samples here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Plot both modes to an SVG file.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Write the bench orchestrator's event log.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Standard deviation of per-node noise, in seconds.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        rounds: Option<u32>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Empty,
    Vf,
}

impl From<Mode> for InstanceMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Empty => InstanceMode::Empty,
            Mode::Vf => InstanceMode::WithVf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioName {
    Monitoring,
    Maintenance,
    Sfaas,
}

impl ScenarioName {
    fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Monitoring => "monitoring",
            ScenarioName::Maintenance => "maintenance",
            ScenarioName::Sfaas => "sfaas",
        }
    }
}

enum Failure {
    Validation(String),
    Server(String),
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Self {
        Failure::Validation(format!("{}: {}", e.pointer, e.message))
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match (&e, e.status()) {
            (ClientError::Api { body, .. }, Some(s)) if s.as_u16() == 400 => match &body.path {
                Some(p) => Failure::Validation(format!("{p}: {}", body.error)),
                None => Failure::Validation(body.error.clone()),
            },
            _ => Failure::Server(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    api::parse_json(&text).map_err(|e| {
        Failure::Validation(format!("{}: {}: {}", path.display(), e.pointer, e.message))
    })
}

fn tenant_client(client: &Client, tenant: &Option<String>) -> Result<Client, Failure> {
    match tenant {
        Some(t) => Ok(client.with_tenant(t)),
        None => Err(Failure::Validation(format!(
            "a tenant is required (--tenant or {TENANT_ENV})"
        ))),
    }
}

fn print_slice(slice: &Slice) {
    println!("{}", slice.state.name());
    if let Some(plan) = &slice.plan {
        for (vf, node) in &plan.assignments {
            println!("  {vf} -> {node}");
        }
    }
    if let Some(t) = slice.response_time_s {
        println!("  response_time_s {t:.3}");
    }
    if let Some(r) = slice.reject_reason {
        println!("  rejected: {r}");
    }
}

async fn run(cli: Cli) -> Result<(), Failure> {
    let client = Client::new(&cli.server, cli.tenant.clone());
    match cli.command {
        Command::Request { blueprint, wait } => {
            let bp = api::parse_blueprint_file(&blueprint)?;
            let client =
                client.with_tenant(cli.tenant.clone().unwrap_or_else(|| bp.tenant.clone()));
            let id = client.submit(&bp).await?;
            println!("{id}");
            if wait {
                let slice = client.wait_settled(&id, Duration::from_secs(30)).await?;
                print_slice(&slice);
            }
        }
        Command::Status { id, json } => {
            let slice = client.slice(&id).await?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&slice).expect("serializable")
                );
            } else {
                print_slice(&slice);
            }
        }
        Command::Reconfigure { id, delta } => {
            let delta: SliceDelta = read_json(&delta)?;
            let slice = tenant_client(&client, &cli.tenant)?
                .reconfigure(&id, &delta)
                .await?;
            print_slice(&slice);
        }
        Command::Terminate { id } => {
            let slice = tenant_client(&client, &cli.tenant)?.terminate(&id).await?;
            println!("{}", slice.state.name());
        }
        Command::Federate {
            exporter,
            importer,
            rules,
        } => {
            let rules: FederationRules = read_json(&rules)?;
            let req = CreateFederationRequest {
                exporter,
                importer,
                rules: rules.rules,
                encrypted: rules.encrypted,
            };
            let link = tenant_client(&client, &cli.tenant)?.federate(&req).await?;
            println!("{} {:?}", link.id, link.state);
        }
        Command::Consent { link } => {
            let link = tenant_client(&client, &cli.tenant)?.consent(&link).await?;
            println!("{} {:?}", link.id, link.state);
        }
        Command::Delegate { grant } => {
            let grant: DelegationGrant = read_json(&grant)?;
            println!(
                "{}",
                tenant_client(&client, &cli.tenant)?
                    .delegate(&grant)
                    .await?
            );
        }
        Command::Events => print!("{}", client.events().await?),
        Command::Bench(Bench::Fig6 {
            mode,
            csv,
            svg,
            events,
            seed,
            noise,
            rounds,
        }) => {
            let req = Fig6Request {
                mode: Some(mode.into()),
                seed,
                noise_sigma_s: noise,
                rounds,
                ..Fig6Request::default()
            };
            let resp = client.fig6(&req).await?;
            if let Some(why) = &resp.aborted {
                eprintln!("warning: sweep stopped early: {why}");
            }
            let text = write_csv(&resp.samples).map_err(|e| Failure::Server(e.to_string()))?;
            match &csv {
                Some(path) => {
                    std::fs::write(path, &text)?;
                    println!("wrote {} rows to {}", resp.samples.len(), path.display());
                }
                None => print!("{text}"),
            }
            if let Some(path) = events {
                std::fs::write(&path, &resp.event_log)?;
            }
            if let Some(path) = svg {
                let other_mode = match mode {
                    Mode::Vf => InstanceMode::Empty,
                    Mode::Empty => InstanceMode::WithVf,
                };
                let other = client
                    .fig6(&Fig6Request {
                        mode: Some(other_mode),
                        ..req
                    })
                    .await?;
                let label = |m: InstanceMode| match m {
                    InstanceMode::WithVf => "WITH_VF",
                    InstanceMode::Empty => "EMPTY",
                };
                let mine: &[BenchSample] = &resp.samples;
                let series = [
                    (label(mode.into()), mine),
                    (label(other_mode), &other.samples[..]),
                ];
                std::fs::write(&path, render_svg(&series))?;
                if csv.is_some() {
                    println!("wrote plot to {}", path.display());
                }
            }
        }
        Command::Scenario { name } => {
            let report = client.scenario(name.as_str()).await?;
            for c in &report.checks {
                println!(
                    "{} {} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            for (k, v) in &report.metrics {
                println!("  {k} = {v}");
            }
            if !report.passed {
                return Err(Failure::Validation(format!(
                    "scenario {} failed",
                    report.name
                )));
            }
        }
    }
    Ok(())
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Server(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
