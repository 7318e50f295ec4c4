use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use chainforge::config::PipelineConfig;
use chainforge::eval::agent::{Agent, AgentOptions, Instrumented};
use chainforge::eval::{run_chain, Mode, PrStatus, RunStatus};
use chainforge::fixtures::{BreakerSpec, FixtureSpec};
use chainforge::pipeline;
use chainforge::report;
use chainforge::store::{Store, HOME_ENV};
use chainforge::validate::{ExclusionReason, Verdict};
use chainforge::{Error, Result};

/// Mine, validate and evaluate multi-step coding-task chains from git history.
#[derive(Debug, Parser)]
#[command(name = "chainforge", version)]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; overrides the config's `output_root`.
    #[arg(long, global = true, env = HOME_ENV)]
    home: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reconstruct pull requests from mainline history.
    Mine,
    /// Run the two-step test validation on mined pull requests.
    Validate,
    /// Group admitted pull requests into task chains.
    Forge,
    /// Extract dependency edges and the chain interdependence ratio.
    Deps,
    /// Evaluate an agent on one task chain.
    Run(RunArgs),
    /// Summarise finished runs.
    Report(ReportArgs),
    /// Synthetic fixture repositories.
    #[command(subcommand)]
    Fixture(FixtureCommand),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Task file, or a task id in the store.
    #[arg(long)]
    task: String,
    /// individual, global or prd; the config default when absent.
    #[arg(long)]
    setting: Option<String>,
    /// Agent spec: scripted:<name>, cmd:<argv> or an http(s) URL.
    #[arg(long, conflicts_with = "agent_cmd")]
    agent: Option<String>,
    /// Agent process argv; receives one JSON request per turn on stdin.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    agent_cmd: Option<Vec<String>>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    iters: Option<u32>,
    /// Run id; derived from task, setting and agent when absent.
    #[arg(long)]
    run_id: Option<String>,
    /// Continue an interrupted run.
    #[arg(long)]
    resume: bool,
    /// Seed for randomised scripted agents.
    #[arg(long)]
    seed: Option<u64>,
    /// Breaker spec (JSON) for scripted:breaker.
    #[arg(long)]
    breaker: Option<PathBuf>,
    /// Pause before every agent turn, in milliseconds.
    #[arg(long)]
    sleep_on_turn: Option<u64>,
    /// Append one line per agent turn to this file.
    #[arg(long)]
    turn_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directories or directories of runs; the store's runs when absent.
    runs: Vec<PathBuf>,
    /// Output directory; `<home>/reports` when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum FixtureCommand {
    /// Build a fixture repository and a matching config file.
    Build {
        spec: PathBuf,
        #[arg(long)]
        dest: PathBuf,
    },
}

/// Exit status: 0 success, 1 partial, 2 configuration or infrastructure error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Success,
    Partial,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            let code = if e.is_infrastructure() { 2 } else { 1 };
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code }));
            ExitCode::from(code)
        }
    }
}

fn print(value: serde_json::Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(&value).expect("json value");
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    PipelineConfig::load(path)
}

fn open_store(cli: &Cli, cfg: Option<&PipelineConfig>) -> Result<Store> {
    let root = cli
        .home
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_root.clone()))
        .unwrap_or_else(Store::default_root);
    let mut store = Store::open(root)?;
    store.lock()?;
    Ok(store)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Mine => {
            let cfg = config(cli)?;
            let store = open_store(cli, Some(&cfg))?;
            let s = pipeline::mine(&cfg, &store)?;
            for w in &s.warnings {
                tracing::warn!("{w}");
            }
            print(json!({ "mined": s.mined, "skipped": s.skipped, "warnings": s.warnings, "output": store.mined(&cfg.repo.name) }));
            Ok(if s.skipped > 0 { Outcome::Partial } else { Outcome::Success })
        }
        Command::Validate => {
            let cfg = config(cli)?;
            let store = open_store(cli, Some(&cfg))?;
            let (summary, reports) = pipeline::validate(&cfg, &store)?;
            print(serde_json::to_value(&summary)?);
            let violated = reports.iter().any(|r| {
                r.verdict == Verdict::Excluded
                    && matches!(r.exclusion_reason, Some(ExclusionReason::Step1Violation | ExclusionReason::Step2Violation))
            });
            Ok(if violated { Outcome::Partial } else { Outcome::Success })
        }
        Command::Forge => {
            let cfg = config(cli)?;
            let store = open_store(cli, Some(&cfg))?;
            let chains = pipeline::forge(&cfg, &store)?;
            let tasks: Vec<_> = chains
                .iter()
                .map(|c| json!({ "task_id": c.task_id, "n": c.n, "task": store.task(&c.task_id), "prd": store.prd(&c.task_id) }))
                .collect();
            print(json!({ "chains": tasks }));
            Ok(Outcome::Success)
        }
        Command::Deps => {
            let cfg = config(cli)?;
            let store = open_store(cli, Some(&cfg))?;
            let s = pipeline::deps(&cfg, &store)?;
            print(serde_json::to_value(&s)?);
            Ok(if s.warnings.is_empty() { Outcome::Success } else { Outcome::Partial })
        }
        Command::Run(args) => cmd_run(cli, args),
        Command::Report(args) => cmd_report(cli, args),
        Command::Fixture(FixtureCommand::Build { spec, dest }) => cmd_fixture(spec, dest),
    }
}

fn sanitize(s: &str) -> String {
    let mut out: String = s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    out.truncate(48);
    out
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<Outcome> {
    let cfg = config(cli)?;
    let store = open_store(cli, Some(&cfg))?;
    let task_path = {
        let p = PathBuf::from(&args.task);
        if p.is_file() {
            p
        } else {
            store.task(&args.task)
        }
    };
    let chain = pipeline::load_task(&task_path)?;
    let mode = args.setting.as_deref().map(Mode::parse).transpose()?;
    let mut setting = cfg.setting.setting(mode);
    if let Some(c) = args.cycles {
        setting.cycles_per_pr = c;
    }
    if let Some(i) = args.iters {
        setting.iterations_per_cycle = i;
    }
    let opts = AgentOptions {
        seed: args.seed.unwrap_or(cfg.agent.seed),
        breaker: args.breaker.as_deref().map(BreakerSpec::load).transpose()?,
    };
    let spec = match &args.agent_cmd {
        Some(argv) => Some(format!("cmd:{}", argv.join(" "))),
        None => args.agent.clone(),
    };
    let inner = cfg.agent(spec.as_deref(), &opts)?;
    let agent: Arc<dyn Agent> = if args.turn_log.is_some() || args.sleep_on_turn.is_some() {
        Arc::new(Instrumented::new(inner, args.turn_log.clone(), args.sleep_on_turn.map(Duration::from_millis)))
    } else {
        inner
    };
    let run_id = args
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}__{}__{}", chain.task_id, setting.mode, sanitize(&agent.name())));
    let harness = cfg.harness()?;
    let rec = run_chain(&harness, &chain, &setting, agent.as_ref(), &store.runs_dir(), &run_id, args.resume)?;
    let scored = report::task_score(&rec)?;
    print(json!({
        "run_id": rec.run_id,
        "task_id": rec.task_id,
        "setting": rec.setting.mode,
        "agent": rec.agent,
        "status": rec.status,
        "task_success": rec.task_success,
        "prs_succeeded": rec.prs.iter().filter(|p| p.pr_success).count(),
        "prs": rec.prs.len(),
        "cycles": rec.totals.cycles,
        "cost_usd": rec.totals.cost_usd,
        "record": store.runs_dir().join(&rec.run_id).join("record.json"),
        "scored_prs": scored.map(|s| s.rows.len()),
    }));
    let partial = rec.status != RunStatus::Completed || rec.prs.iter().any(|p| p.status == PrStatus::InfrastructureFailed);
    Ok(if partial { Outcome::Partial } else { Outcome::Success })
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<Outcome> {
    let cfg = cli.config.as_ref().map(|p| PipelineConfig::load(p)).transpose()?;
    let store = open_store(cli, cfg.as_ref())?;
    let dirs = if args.runs.is_empty() { vec![store.runs_dir()] } else { args.runs.clone() };
    let manifests = report::find_runs(&dirs)?;
    if manifests.is_empty() {
        return Err(Error::Config(format!("no runs found under {}", dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(", "))));
    }
    let built = report::build_report(report::load_runs(&manifests)?)?;
    let out = args.out.clone().unwrap_or_else(|| store.reports_dir());
    let files = report::write_report(&built, &out)?;
    print(json!({ "runs": built.runs.len(), "unfinished": built.unfinished, "files": files, "summary": built.summary }));
    Ok(if built.unfinished.is_empty() { Outcome::Success } else { Outcome::Partial })
}

fn cmd_fixture(spec: &Path, dest: &Path) -> Result<Outcome> {
    let fixture = FixtureSpec::load(spec)?;
    let built = fixture.build(dest)?;
    let mut cfg = format!("[repo]\nname = \"{}\"\npath = \"{}\"\nbranch = \"{}\"\n", built.name, built.name, fixture.branch);
    if let Some(issues) = &built.issues {
        cfg.push_str(&format!("metadata_file = \"{}\"\n", issues.file_name().unwrap_or_default().to_string_lossy()));
    }
    let cfg_path = dest.join(format!("{}.toml", built.name));
    chainforge::store::write_atomic(&cfg_path, cfg.as_bytes())?;
    print(json!({
        "repo": built.repo,
        "commits": built.commits.len(),
        "config": cfg_path,
        "breaker": built.breaker,
    }));
    Ok(Outcome::Success)
}
