use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use webenv_client::{ClientError, ServiceClient};
use webenv_core::api::{ReplayRequest, RunRequest, RunState};
use webenv_service::{start, RunningService, ServiceConfig};

#[derive(Parser)]
#[command(name = "webenv", version, about = "Web-agent environment: benchmark runs, service, replay, reports")]
struct Cli {
    /// Use a running service instead of an in-process one (e.g. http://127.0.0.1:8780).
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark suite and print the category report.
    Run(RunArgs),
    /// Serve the HTTP API and the wire listener.
    Serve(ServeArgs),
    /// Re-execute a recorded mock trajectory and compare it line by line.
    Replay {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Rebuild the report of a run directory from its trajectory logs.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Suite file or synthetic:<seed>:<per-category>.
    #[arg(long)]
    suite: String,
    /// Site graph for the mock backend.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, default_value = "mock")]
    backend: String,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, default_value = "normal")]
    mode: String,
    #[arg(long, default_value_t = 20)]
    max_steps: u32,
    #[arg(long)]
    out: Option<PathBuf>,
    /// wire or scripted:<name>.
    #[arg(long, default_value = "wire")]
    policy: String,
    /// Judge endpoint for semantic evaluation.
    #[arg(long)]
    judge: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rollouts per task; above 1, advantages are written.
    #[arg(long, default_value_t = 1)]
    group_size: u32,
    /// Per-turn policy timeout in milliseconds.
    #[arg(long)]
    policy_timeout_ms: Option<u64>,
    /// Wire listener of the in-process service (policy connections).
    #[arg(long)]
    wire_bind: Option<SocketAddr>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8780")]
    bind: SocketAddr,
    /// Defaults to the HTTP port plus one.
    #[arg(long)]
    wire_bind: Option<SocketAddr>,
    /// Suite served to driver sessions.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, default_value = "mock")]
    backend: String,
    #[arg(long, default_value = "normal")]
    mode: String,
    #[arg(long, default_value_t = 20)]
    max_steps: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where driver-session trajectories go.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    judge: Option<String>,
    /// Seconds a wire connection may stay silent.
    #[arg(long, default_value_t = 300)]
    idle_timeout: u64,
}

fn abs(p: &Path) -> Result<String> {
    let p = std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))?;
    Ok(p.to_string_lossy().into_owned())
}

fn suite_arg(s: &str) -> Result<String> {
    if s.starts_with("synthetic:") {
        Ok(s.to_string())
    } else {
        abs(Path::new(s))
    }
}

async fn local_service(wire_bind: Option<SocketAddr>) -> Result<RunningService> {
    let mut cfg = ServiceConfig::new("127.0.0.1:0".parse().expect("valid address"));
    cfg.wire_bind = wire_bind;
    Ok(start(cfg).await?)
}

/// A client for `--server`, or for a fresh in-process service.
async fn client(server: &Option<String>, wire_bind: Option<SocketAddr>) -> Result<(ServiceClient, Option<RunningService>)> {
    match server {
        Some(url) => Ok((ServiceClient::new(url)?, None)),
        None => {
            let svc = local_service(wire_bind).await?;
            Ok((ServiceClient::for_addr(svc.http_addr), Some(svc)))
        }
    }
}

async fn run(server: &Option<String>, a: RunArgs) -> Result<ExitCode> {
    let req = RunRequest {
        suite: suite_arg(&a.suite)?,
        graph: a.graph.as_deref().map(abs).transpose()?,
        backend: a.backend,
        parallel: a.parallel,
        mode: a.mode,
        max_steps: a.max_steps,
        out: a.out.as_deref().map(abs).transpose()?,
        policy: a.policy,
        judge: a.judge,
        seed: a.seed,
        group_size: a.group_size,
        policy_timeout_ms: a.policy_timeout_ms,
    };
    let (c, svc) = client(server, a.wire_bind).await?;
    let health = c.wait_ready(Duration::from_secs(10)).await?;
    if req.policy == "wire" {
        eprintln!("waiting for policy connections on {}", health.wire_addr);
    }
    let id = c.start_run(&req).await?;
    let status = c.wait_run(&id).await?;
    if let Some(svc) = svc {
        svc.shutdown().await;
    }
    match status.state {
        RunState::Completed => {
            print!("{}", status.summary.unwrap_or_default());
            if let Some(out) = &req.out {
                eprintln!("results written to {out}");
            }
            Ok(ExitCode::SUCCESS)
        }
        _ => bail!("run {id} failed: {}", status.error.unwrap_or_default()),
    }
}

async fn serve(a: ServeArgs) -> Result<ExitCode> {
    let driver = match &a.suite {
        Some(s) => Some(RunRequest {
            suite: suite_arg(s)?,
            graph: a.graph.as_deref().map(abs).transpose()?,
            backend: a.backend,
            mode: a.mode,
            max_steps: a.max_steps,
            seed: a.seed,
            out: a.out.as_deref().map(abs).transpose()?,
            judge: a.judge,
            ..RunRequest::new("")
        }),
        None => None,
    };
    let mut cfg = ServiceConfig::new(a.bind);
    cfg.wire_bind = a.wire_bind;
    cfg.driver = driver;
    cfg.idle_timeout = Duration::from_secs(a.idle_timeout);
    let svc = start(cfg).await?;
    println!("http listening on {}", svc.http_addr);
    println!("wire listening on {}", svc.wire_addr);
    tokio::select! {
        _ = svc.join() => {}
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(ExitCode::SUCCESS)
}

async fn replay(server: &Option<String>, traj: &Path, graph: &Path, seed: u64) -> Result<ExitCode> {
    let (c, svc) = client(server, None).await?;
    let req = ReplayRequest {
        traj: abs(traj)?,
        graph: abs(graph)?,
        seed,
    };
    let r = c.replay(&req).await;
    if let Some(svc) = svc {
        svc.shutdown().await;
    }
    match r {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.matched { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Err(ClientError::Api { status: 409, error }) => {
            eprintln!("{error}");
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.into()),
    }
}

async fn report(server: &Option<String>, dir: &Path) -> Result<ExitCode> {
    let (c, svc) = client(server, None).await?;
    let r = c.report(&abs(dir)?).await;
    if let Some(svc) = svc {
        svc.shutdown().await;
    }
    print!("{}", r?.rendered);
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let r = match cli.cmd {
        Command::Run(a) => run(&cli.server, a).await,
        Command::Serve(a) => serve(a).await,
        Command::Replay { traj, graph, seed } => replay(&cli.server, &traj, &graph, seed).await,
        Command::Report { dir } => report(&cli.server, &dir).await,
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
