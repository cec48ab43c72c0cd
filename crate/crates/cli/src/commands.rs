use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use agentkernel::agents::AgentRegistry;
use agentkernel::config::{FileConfig, Overrides, Settings};
use agentkernel::controller::{final_message, Controller, ControllerOptions, SessionHandle, SessionSpec};
use agentkernel::eval::{load_suite, run_task, summarize, ResponseSource, RunOptions, TaskSpec};
use agentkernel::event::{read_trajectory, TerminationReason};
use agentkernel::llm::{Gateway, LlmMode, PLATFORM_VERSION};
use agentkernel::runtime::images::{read_build_context, resolve_runtime_image, BuildContext, DryRunRegistry, EngineRegistry, ImageRegistry};
use agentkernel::runtime::{LocalRuntime, Runtime, RuntimeConfig};
use agentkernel_server::action_api::action_router;
use agentkernel_server::sessions::{session_router, SessionManager};
use agentkernel_server::RemoteRuntime;
use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};

use crate::LlmFlags;

const DOCKERFILE: &[u8] = include_bytes!("../runtime-image/Dockerfile");

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task instruction given to the agent as the first user message
    #[arg(short = 't', long)]
    task: String,
    /// Agent name, e.g. `codeact@1`; `codeact` picks the only version
    #[arg(short = 'a', long, default_value = "codeact@1")]
    agent: String,
    #[command(flatten)]
    llm: LlmFlags,
    /// Directory the agent works in [env: AK_WORKSPACE] [default: ./workspace]
    #[arg(long)]
    workspace: Option<PathBuf>,
    /// Execute actions through a remote action API instead of locally
    #[arg(long)]
    runtime_url: Option<String>,
    /// Stop after this many agent actions
    #[arg(long)]
    max_iterations: Option<u32>,
    /// Stop once the session has spent this many dollars
    #[arg(long)]
    max_cost: Option<f64>,
    /// Shell timeout cap in seconds [env: AK_TIMEOUT_SHELL]
    #[arg(long)]
    timeout_shell: Option<u64>,
    /// Write the session trajectory here
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 3000)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Agent used when a session request names none
    #[arg(long, default_value = "codeact@1")]
    agent: String,
    #[command(flatten)]
    llm: LlmFlags,
    /// Directory sessions work in [env: AK_WORKSPACE] [default: ./workspace]
    #[arg(long)]
    workspace: Option<PathBuf>,
    /// Execute actions through a remote action API instead of locally
    #[arg(long)]
    runtime_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeRuntimeArgs {
    #[arg(long, default_value_t = 8000)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory actions run in [env: AK_WORKSPACE] [default: ./workspace]
    #[arg(long)]
    workspace: Option<PathBuf>,
    /// Shell timeout cap in seconds [env: AK_TIMEOUT_SHELL]
    #[arg(long)]
    timeout_shell: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trajectory file (`.jsonl`)
    #[arg(long)]
    trajectory: PathBuf,
    /// Only verify; do not print the events
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Suite name under the suites directory, or a directory path
    #[arg(long)]
    suite: String,
    /// Run only these task ids
    #[arg(long = "task")]
    tasks: Vec<String>,
    /// Override every task's agent
    #[arg(long)]
    agent: Option<String>,
    #[command(flatten)]
    llm: LlmFlags,
    /// Report directory [default: ./reports]
    #[arg(long)]
    reports: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    /// Suite name under the suites directory, or a directory path
    #[arg(long)]
    suite: String,
    /// Record only these task ids
    #[arg(long = "task")]
    tasks: Vec<String>,
    /// Take responses from each task's script, or from the live endpoint
    #[arg(long, default_value = "scripted", value_parser = ["scripted", "live"])]
    from: String,
    #[command(flatten)]
    llm: LlmFlags,
}

#[derive(Debug, Subcommand)]
pub enum ImagesCommand {
    /// Print the runtime image tags for a base image and what would be built
    Resolve(ResolveArgs),
}

#[derive(Debug, Args)]
pub struct ResolveArgs {
    /// Base image, e.g. `ubuntu:22.04`
    #[arg(long, env = "AK_SANDBOX_IMAGE")]
    base: String,
    /// Build context directory [default: the bundled runtime image context]
    #[arg(long)]
    context: Option<PathBuf>,
    /// Platform version in the generic tag
    #[arg(long, default_value = PLATFORM_VERSION)]
    platform_version: String,
    /// Build with the container engine instead of recording a dry run
    #[arg(long)]
    build: bool,
    /// Dry-run registry state, read before and updated after resolving
    #[arg(long, conflicts_with = "build")]
    registry_file: Option<PathBuf>,
}

fn load_settings(config: &Path, overrides: Overrides) -> Result<Settings> {
    let file = FileConfig::load_or_default(config)?;
    let base = config.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    Ok(Settings::resolve(&overrides, |k| std::env::var(k).ok(), &file, base)?)
}

fn llm_overrides(llm: &LlmFlags) -> Overrides {
    Overrides {
        mode: llm.mode.clone(),
        model: llm.model.clone(),
        recording: llm.recording.clone(),
        script: llm.script.clone(),
        endpoint: llm.endpoint.clone(),
        ..Overrides::default()
    }
}

fn registry(settings: &Settings) -> Result<Arc<AgentRegistry>> {
    Ok(Arc::new(match &settings.agents {
        Some(path) => AgentRegistry::load(path)?,
        None => AgentRegistry::builtin(),
    }))
}

fn workspace(settings: &Settings) -> Result<PathBuf> {
    let dir = settings.workspace.clone().unwrap_or_else(|| PathBuf::from("workspace"));
    fs::create_dir_all(&dir).with_context(|| format!("creating workspace {}", dir.display()))?;
    Ok(dir)
}

fn runtime(settings: &Settings, workspace: &Path, url: Option<&str>) -> Result<Arc<dyn Runtime>> {
    if let Some(url) = url {
        return Ok(Arc::new(RemoteRuntime::new(url)?));
    }
    let mut config = RuntimeConfig::new(workspace);
    config.max_shell_timeout = settings.timeout_shell.map(Duration::from_secs);
    Ok(Arc::new(LocalRuntime::new(config)?))
}

pub fn run(config: &Path, args: RunArgs) -> Result<ExitCode> {
    let settings = load_settings(
        config,
        Overrides {
            workspace: args.workspace.clone(),
            timeout_shell: args.timeout_shell,
            max_iterations: args.max_iterations,
            max_cost: args.max_cost,
            ..llm_overrides(&args.llm)
        },
    )?;
    let dir = workspace(&settings)?;
    let registry = registry(&settings)?;
    if registry.get(&args.agent).is_none() {
        bail!("unknown agent {} (known: {})", args.agent, registry.names().collect::<Vec<_>>().join(", "));
    }
    let gateway = Gateway::from_settings(&settings.llm)?;
    let controller = Controller::new(registry, runtime(&settings, &dir, args.runtime_url.as_deref())?, gateway);
    let session = "cli";
    let state = controller.run_session(
        SessionSpec::new(session, args.task, args.agent, settings.limits),
        &SessionHandle::new(session),
    )?;
    if let Some(path) = &args.trajectory {
        fs::write(path, state.to_trajectory()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(message) = final_message(&state) {
        println!("{message}");
    }
    let termination = state.termination();
    eprintln!(
        "termination: {}  steps: {}  cost: {:.6}",
        termination.map_or("none", |t| t.as_str()),
        state.iteration(),
        state.accumulated_cost()
    );
    Ok(if termination == Some(TerminationReason::Finished) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn block_on<F: std::future::Future<Output = std::io::Result<()>>>(f: F) -> Result<ExitCode> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()?.block_on(f)?;
    Ok(ExitCode::SUCCESS)
}

async fn bind(host: &str, port: u16) -> std::io::Result<tokio::net::TcpListener> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    Ok(listener)
}

async fn ctrl_c() {
    let _ = tokio::signal::ctrl_c().await;
}

pub fn serve(config: &Path, args: ServeArgs) -> Result<ExitCode> {
    let settings = load_settings(
        config,
        Overrides {
            workspace: args.workspace.clone(),
            ..llm_overrides(&args.llm)
        },
    )?;
    let dir = workspace(&settings)?;
    let controller = Controller::new(
        registry(&settings)?,
        runtime(&settings, &dir, args.runtime_url.as_deref())?,
        Gateway::from_settings(&settings.llm)?,
    )
    .with_options(ControllerOptions { interactive: true });
    let manager = Arc::new(SessionManager::new(controller, args.agent, settings.limits));
    let router = session_router(manager.clone());
    block_on(async move {
        let listener = bind(&args.host, args.port).await?;
        agentkernel_server::serve(listener, router, async move {
            ctrl_c().await;
            manager.abort_all();
        })
        .await
    })
}

pub fn serve_runtime(config: &Path, args: ServeRuntimeArgs) -> Result<ExitCode> {
    let settings = load_settings(
        config,
        Overrides {
            workspace: args.workspace.clone(),
            timeout_shell: args.timeout_shell,
            ..Overrides::default()
        },
    )?;
    let dir = workspace(&settings)?;
    let router = action_router(runtime(&settings, &dir, None)?);
    block_on(async move {
        let listener = bind(&args.host, args.port).await?;
        agentkernel_server::serve(listener, router, ctrl_c()).await
    })
}

pub fn replay(args: ReplayArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.trajectory).with_context(|| format!("reading {}", args.trajectory.display()))?;
    let sections = read_trajectory(&text)?;
    let mut events = 0;
    for section in &sections {
        if !args.quiet {
            if let Some(h) = &section.header {
                println!("{h}");
            }
            for e in &section.events {
                println!("{}", e.encode());
            }
        }
        events += section.events.len();
        let termination = section.header.as_ref().and_then(|h| h["termination"].as_str()).unwrap_or("-");
        eprintln!("{}: {} events, termination {termination}", section.session(), section.events.len());
    }
    eprintln!("ok: {} session(s), {events} events", sections.len());
    Ok(ExitCode::SUCCESS)
}

/// Loads the suite and returns its display name with the selected tasks.
fn suite_tasks(settings: &Settings, suite: &str, only: &[String]) -> Result<(String, Vec<TaskSpec>)> {
    let dir = if Path::new(suite).is_dir() {
        PathBuf::from(suite)
    } else {
        settings.suites.join(suite)
    };
    let name = dir
        .canonicalize()
        .ok()
        .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| suite.to_string());
    let mut specs = load_suite(&dir)?;
    if !only.is_empty() {
        let wanted: BTreeSet<&str> = only.iter().map(String::as_str).collect();
        specs.retain(|s| wanted.contains(s.id.as_str()));
        let found: BTreeSet<&str> = specs.iter().map(|s| s.id.as_str()).collect();
        if let Some(missing) = wanted.difference(&found).next() {
            bail!("suite {suite} has no task {missing}");
        }
    }
    if specs.is_empty() {
        bail!("suite {suite} ({}) has no tasks", dir.display());
    }
    Ok((name, specs))
}

pub fn eval(config: &Path, args: EvalArgs) -> Result<ExitCode> {
    let settings = load_settings(config, llm_overrides(&args.llm))?;
    let (name, specs) = suite_tasks(&settings, &args.suite, &args.tasks)?;
    let (source, record) = match settings.llm.mode {
        LlmMode::Replay => (ResponseSource::Replay, false),
        LlmMode::Scripted => (ResponseSource::Script, false),
        LlmMode::Live => (ResponseSource::Live(settings.llm.clone()), false),
        LlmMode::Record => (ResponseSource::Live(settings.llm.clone()), true),
    };
    let opts = RunOptions {
        source,
        record,
        agent: args.agent,
        prices: settings.llm.prices.clone(),
        registry: registry(&settings)?,
    };
    let mut results = Vec::new();
    for spec in &specs {
        results.push(run_task(spec, &opts)?.result);
    }
    let report = summarize(&name, results);
    print!("{}", report.to_text());
    let dir = args.reports.unwrap_or_else(|| settings.reports.clone());
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    let (txt, jsonl) = report.write(&dir, &stamp).with_context(|| format!("writing report to {}", dir.display()))?;
    eprintln!("report: {} {}", txt.display(), jsonl.display());
    Ok(if report.summary.successes == report.summary.total {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn record(config: &Path, args: RecordArgs) -> Result<ExitCode> {
    let settings = load_settings(config, llm_overrides(&args.llm))?;
    let (_, specs) = suite_tasks(&settings, &args.suite, &args.tasks)?;
    let opts = RunOptions {
        source: if args.from == "live" {
            ResponseSource::Live(settings.llm.clone())
        } else {
            ResponseSource::Script
        },
        record: true,
        agent: None,
        prices: settings.llm.prices.clone(),
        registry: registry(&settings)?,
    };
    let mut failed = 0;
    for spec in &specs {
        let r = run_task(spec, &opts)?.result;
        let path = spec.recording.as_ref().map(|p| spec.resolve(p).display().to_string()).unwrap_or_default();
        println!("{:<28} {:<5} {path}", r.id, if r.success { "ok" } else { "FAIL" });
        if !r.success {
            failed += 1;
            eprintln!("{}: {}", r.id, r.detail);
        }
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn bundled_context() -> Result<BuildContext> {
    let exe = std::env::current_exe().context("locating the agentkernel binary")?;
    let mut ctx = BuildContext::new();
    ctx.insert("Dockerfile".into(), DOCKERFILE.to_vec());
    ctx.insert("agentkernel".into(), fs::read(&exe).with_context(|| format!("reading {}", exe.display()))?);
    Ok(ctx)
}

pub fn images(command: ImagesCommand) -> Result<ExitCode> {
    let ImagesCommand::Resolve(args) = command;
    let ctx = match &args.context {
        Some(dir) => read_build_context(dir)?,
        None => bundled_context()?,
    };
    let mut registry: Box<dyn ImageRegistry> = if args.build {
        let engine = std::env::var("AK_CONTAINER_ENGINE").unwrap_or_else(|_| "docker".into());
        Box::new(EngineRegistry::new(engine))
    } else {
        match &args.registry_file {
            Some(path) => Box::new(DryRunRegistry::load(path)?),
            None => Box::new(DryRunRegistry::default()),
        }
    };
    let (image, decision) = resolve_runtime_image(&args.base, &args.platform_version, &ctx, registry.as_mut())?;
    println!("generic_tag: {}", image.generic_tag);
    println!("hash_tag: {}", image.hash_tag);
    println!("source_digest: {}", image.source_digest);
    println!("decision: {}", serde_decision(decision));
    Ok(ExitCode::SUCCESS)
}

fn serde_decision(d: agentkernel::runtime::images::BuildDecision) -> &'static str {
    use agentkernel::runtime::images::BuildDecision::*;
    match d {
        Reuse => "reuse",
        RebuildFromGeneric => "rebuild_from_generic",
        BuildFromScratch => "build_from_scratch",
    }
}
