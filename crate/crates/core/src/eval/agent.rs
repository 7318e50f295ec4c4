//! Agent adapters: the turn protocol and its process and HTTP transports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::forge::TaskChain;
use crate::sandbox::host::run_with_timeout;
use crate::sandbox::Sandbox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurnRequest {
    pub workspace_root: PathBuf,
    pub prompt: String,
    pub feedback: String,
    pub env_path: String,
    pub max_iterations: u32,
    pub session_token: String,
    pub task_id: String,
    pub setting: Mode,
    /// 1-based PR ordinal; absent in PRD mode.
    #[serde(default)]
    pub pr_ordinal: Option<usize>,
    pub cycle: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TurnStatus {
    Submitted,
    BudgetExhausted,
    AgentError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurnResult {
    pub status: TurnStatus,
    #[serde(default)]
    pub iterations_used: u32,
    #[serde(default)]
    pub cost_usd: Option<f64>,
    #[serde(default)]
    pub transcript_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl AgentTurnResult {
    pub fn submitted(iterations_used: u32) -> Self {
        Self { status: TurnStatus::Submitted, iterations_used, cost_usd: None, transcript_ref: None, diagnostic: None }
    }

    pub fn error(diagnostic: impl Into<String>) -> Self {
        Self {
            status: TurnStatus::AgentError,
            iterations_used: 0,
            cost_usd: None,
            transcript_ref: None,
            diagnostic: Some(diagnostic.into()),
        }
    }
}

/// What a turn may touch besides the request itself.
pub struct TurnContext<'a> {
    pub sandbox: &'a Sandbox,
    /// Full chain; only scripted oracles look at it.
    pub chain: &'a TaskChain,
    pub transcript_dir: &'a Path,
    /// Wall-clock ceiling for the turn.
    pub timeout: Duration,
}

pub trait Agent: Send + Sync {
    fn name(&self) -> String;
    fn turn(&self, req: &AgentTurnRequest, ctx: &TurnContext<'_>) -> Result<AgentTurnResult>;
}

fn write_transcript(dir: &Path, name: &str, data: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(name);
    std::fs::write(&p, data).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

/// Parses the last non-empty stdout line as the turn result.
pub fn parse_turn_result(stdout: &[u8]) -> Result<AgentTurnResult> {
    let text = String::from_utf8_lossy(stdout);
    let line = text
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::Agent("adapter printed no result line".into()))?;
    let mut de = serde_json::Deserializer::from_str(line);
    serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Agent(format!("bad result at {}: {}", e.path(), e.inner())))
}

/// Spawns `argv` inside the sandbox for every turn: one JSON request line on
/// stdin, one JSON result line (the last) on stdout.
#[derive(Debug, Clone)]
pub struct ProcessAgent {
    pub argv: Vec<String>,
}

impl Agent for ProcessAgent {
    fn name(&self) -> String {
        format!("cmd:{}", self.argv.join(" "))
    }

    fn turn(&self, req: &AgentTurnRequest, ctx: &TurnContext<'_>) -> Result<AgentTurnResult> {
        let mut cmd = ctx.sandbox.agent_command(&self.argv)?;
        cmd.env("CHAINFORGE_SESSION", &req.session_token);
        let mut line = serde_json::to_vec(req)?;
        line.push(b'\n');
        let out = run_with_timeout(cmd, Some(&line), Some(ctx.timeout))?;
        let stdout = write_transcript(ctx.transcript_dir, "agent.stdout", &out.stdout)?;
        write_transcript(ctx.transcript_dir, "agent.stderr", &out.stderr)?;
        if out.timed_out {
            return Ok(AgentTurnResult::error(format!("turn exceeded {}s", ctx.timeout.as_secs())));
        }
        let mut result = match parse_turn_result(&out.stdout) {
            Ok(r) => r,
            Err(e) => AgentTurnResult::error(format!("{e}; exit {:?}; stderr: {}", out.exit_code, crate::sandbox::runner::truncate(&out.stderr_text(), 2048))),
        };
        if result.transcript_ref.is_none() {
            result.transcript_ref = Some(stdout.to_string_lossy().to_string());
        }
        Ok(result)
    }
}

/// POSTs the request as JSON and reads the result from the response body.
#[derive(Debug, Clone)]
pub struct HttpAgent {
    pub url: String,
}

impl Agent for HttpAgent {
    fn name(&self) -> String {
        format!("http:{}", self.url)
    }

    fn turn(&self, req: &AgentTurnRequest, ctx: &TurnContext<'_>) -> Result<AgentTurnResult> {
        let resp = ureq::post(&self.url).timeout(ctx.timeout).send_json(serde_json::to_value(req)?);
        let body = match resp {
            Ok(r) => r.into_string().map_err(|e| Error::Agent(e.to_string()))?,
            Err(e) => return Ok(AgentTurnResult::error(format!("http: {e}"))),
        };
        let p = write_transcript(ctx.transcript_dir, "agent.response", body.as_bytes())?;
        let mut result = parse_turn_result(body.as_bytes()).unwrap_or_else(|e| AgentTurnResult::error(e.to_string()));
        if result.transcript_ref.is_none() {
            result.transcript_ref = Some(p.to_string_lossy().to_string());
        }
        Ok(result)
    }
}

/// Wraps an agent to log each turn and optionally pause before it.
pub struct Instrumented {
    pub inner: Arc<dyn Agent>,
    pub turn_log: Option<PathBuf>,
    pub pause: Option<Duration>,
    lock: Mutex<()>,
}

impl Instrumented {
    pub fn new(inner: Arc<dyn Agent>, turn_log: Option<PathBuf>, pause: Option<Duration>) -> Self {
        Self { inner, turn_log, pause, lock: Mutex::new(()) }
    }
}

impl Agent for Instrumented {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn turn(&self, req: &AgentTurnRequest, ctx: &TurnContext<'_>) -> Result<AgentTurnResult> {
        if let Some(path) = &self.turn_log {
            let _g = self.lock.lock().unwrap_or_else(|e| e.into_inner());
            let pr = req.pr_ordinal.map_or("all".to_string(), |k| k.to_string());
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
            writeln!(f, "{} {} pr={pr} cycle={}", req.task_id, req.setting, req.cycle).map_err(|e| Error::io(path, e))?;
        }
        if let Some(d) = self.pause {
            std::thread::sleep(d);
        }
        self.inner.turn(req, ctx)
    }
}

/// Options shared by agent factories.
#[derive(Debug, Clone, Default)]
pub struct AgentOptions {
    pub seed: u64,
    pub breaker: Option<crate::fixtures::BreakerSpec>,
}

type AgentFactory = fn(&AgentOptions) -> Result<Arc<dyn Agent>>;

/// Named agents (`scripted:<name>`); process and HTTP agents are built directly.
#[derive(Clone)]
pub struct AgentRegistry {
    factories: BTreeMap<String, AgentFactory>,
}

impl Default for AgentRegistry {
    fn default() -> Self {
        let mut r = Self { factories: BTreeMap::new() };
        super::scripted::register_all(&mut r);
        r
    }
}

impl AgentRegistry {
    pub fn register(&mut self, name: &str, factory: AgentFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    /// Resolves `scripted:<name>`, `cmd:<argv...>` or `http:<url>`.
    pub fn build(&self, spec: &str, opts: &AgentOptions) -> Result<Arc<dyn Agent>> {
        if let Some(rest) = spec.strip_prefix("cmd:") {
            let argv: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(Error::Config("cmd agent needs a command".into()));
            }
            return Ok(Arc::new(ProcessAgent { argv }));
        }
        if spec.starts_with("http:") || spec.starts_with("https:") {
            let url = spec.strip_prefix("http:").filter(|u| u.starts_with("//")).map_or(spec.to_string(), |u| format!("http:{u}"));
            return Ok(Arc::new(HttpAgent { url }));
        }
        let name = spec.strip_prefix("scripted:").unwrap_or(spec);
        let f = self.factories.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "agent",
            name: name.to_string(),
            available: self.names().join(", "),
        })?;
        f(opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_line_is_the_last_nonempty_line() {
        let r = parse_turn_result(b"noise\n{\"status\":\"submitted\",\"iterations_used\":3}\n\n").unwrap();
        assert_eq!((r.status, r.iterations_used, r.cost_usd), (TurnStatus::Submitted, 3, None));
        let e = parse_turn_result(b"{\"status\":\"done\"}").unwrap_err();
        assert!(e.to_string().contains("status"), "{e}");
        assert!(parse_turn_result(b"").is_err());
    }

    #[test]
    fn registry_resolves_specs() {
        let r = AgentRegistry::default();
        let o = AgentOptions::default();
        assert_eq!(r.build("scripted:gold", &o).unwrap().name(), "scripted:gold");
        assert_eq!(r.build("cmd:python3 agent.py", &o).unwrap().name(), "cmd:python3 agent.py");
        assert_eq!(r.build("http://localhost:9/turn", &o).unwrap().name(), "http:http://localhost:9/turn");
        assert!(matches!(r.build("scripted:nope", &o), Err(Error::UnknownStrategy { .. })));
    }
}
