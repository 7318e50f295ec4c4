//! Evaluation of agents on task chains under the Individual, Global and PRD
//! settings.

pub mod agent;
pub mod prompt;
mod run;
pub mod scripted;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forge::{TaskChain, VerificationSuite};
use crate::metrics::{EvalRow, HealthSnapshot};
use crate::sandbox::{GuardStatus, SuiteReport};
use crate::types::{CommitId, TestId};

pub use agent::{Agent, AgentOptions, AgentRegistry, AgentTurnRequest, AgentTurnResult, TurnContext, TurnStatus};
pub use run::{run_chain, Harness, RunState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Individual,
    Global,
    Prd,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Individual, Mode::Global, Mode::Prd];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Individual => "individual",
            Mode::Global => "global",
            Mode::Prd => "prd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s.to_ascii_lowercase()).ok_or_else(|| Error::UnknownStrategy {
            kind: "setting",
            name: s.to_string(),
            available: Self::ALL.map(Mode::as_str).join(", "),
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSetting {
    pub mode: Mode,
    #[serde(default = "default_cycles")]
    pub cycles_per_pr: usize,
    #[serde(default = "default_iterations")]
    pub iterations_per_cycle: u32,
}

fn default_cycles() -> usize {
    3
}
fn default_iterations() -> u32 {
    40
}

impl EvaluationSetting {
    pub fn new(mode: Mode) -> Self {
        Self { mode, cycles_per_pr: default_cycles(), iterations_per_cycle: default_iterations() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles_per_pr < 1 || self.iterations_per_cycle < 1 {
            return Err(Error::Config(format!("cycles and iterations must be at least 1, got {self:?}")));
        }
        Ok(())
    }
}

/// Suite in force at 1-based step `i` of a stateful run: the current PR's
/// fail-to-pass tests, plus every earlier obligation as pass-to-pass. A test
/// appearing on both sides stays pass-to-pass.
pub fn cascade_suite(suites: &[VerificationSuite], i: usize) -> VerificationSuite {
    assert!(i >= 1 && i <= suites.len(), "cascade step {i} outside 1..={}", suites.len());
    let current = &suites[i - 1];
    let mut seen: BTreeSet<&TestId> = BTreeSet::new();
    let mut p2p = Vec::new();
    let earlier = suites[..i - 1].iter().flat_map(|s| s.fail_to_pass.iter().chain(&s.pass_to_pass));
    for t in current.pass_to_pass.iter().chain(earlier) {
        if seen.insert(t) {
            p2p.push(t.clone());
        }
    }
    let mut f2p_seen = BTreeSet::new();
    let f2p = current.fail_to_pass.iter().filter(|t| !seen.contains(t) && f2p_seen.insert(*t)).cloned().collect();
    VerificationSuite { fail_to_pass: f2p, pass_to_pass: p2p }
}

/// Every obligation of the chain, each id once, in chain order.
pub fn union_suite(suites: &[VerificationSuite]) -> Vec<TestId> {
    let mut seen = BTreeSet::new();
    suites.iter().flat_map(|s| s.all()).filter(|t| seen.insert(t.clone())).collect()
}

/// Content hash of a chain, used to match resumed runs to their task.
pub fn chain_digest(chain: &TaskChain) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(chain)?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleRecord {
    /// 1-based; within the PR, or across the pool in PRD mode.
    pub index: usize,
    #[serde(default)]
    pub pr: Option<usize>,
    pub turn: AgentTurnResult,
    /// Absent when the cycle was invalidated before tests ran.
    #[serde(default)]
    pub report: Option<SuiteReport>,
    pub tree_digest: String,
    /// Workspace patch after the cycle, relative to the run directory.
    pub patch_file: String,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl CycleRecord {
    pub fn passed(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.all_passed())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrStatus {
    Running,
    Succeeded,
    Failed,
    InfrastructureFailed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrRun {
    pub ordinal: usize,
    pub pr_number: u64,
    pub commit_id: CommitId,
    pub status: PrStatus,
    pub pr_success: bool,
    /// Workspace tree id when the PR's turn sequence began.
    #[serde(default)]
    pub start_digest: Option<String>,
    #[serde(default)]
    pub cycles: Vec<CycleRecord>,
    #[serde(default)]
    pub eval: Option<EvalRow>,
    #[serde(default)]
    pub health: Option<HealthSnapshot>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted,
    Invalidated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrityEvent {
    #[serde(default)]
    pub pr: Option<usize>,
    pub cycle: usize,
    /// `tamper`, `restore-mismatch` or `future-object`.
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Integrity {
    pub guard: GuardStatus,
    #[serde(default)]
    pub events: Vec<IntegrityEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Totals {
    pub cycles: usize,
    pub iterations: u64,
    /// Unknown unless every turn reported a cost.
    pub cost_usd: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResumeEvent {
    #[serde(default)]
    pub pr: Option<usize>,
    pub cycle: usize,
    pub tree_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub run_id: String,
    pub task_id: String,
    pub repo: String,
    pub chain_digest: String,
    pub setting: EvaluationSetting,
    pub agent: String,
    pub status: RunStatus,
    pub prs: Vec<PrRun>,
    /// PRD mode only.
    #[serde(default)]
    pub pooled_cycles: Vec<CycleRecord>,
    pub task_success: bool,
    pub totals: Totals,
    pub integrity: Integrity,
    #[serde(default)]
    pub base_health: Option<HealthSnapshot>,
    #[serde(default)]
    pub gold_health: Vec<HealthSnapshot>,
    #[serde(default)]
    pub resumes: Vec<ResumeEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl RunRecord {
    pub fn all_cycles(&self) -> impl Iterator<Item = &CycleRecord> {
        self.prs.iter().flat_map(|p| p.cycles.iter()).chain(self.pooled_cycles.iter())
    }

    /// Budget ceilings and success consistency.
    pub fn check_budget(&self, n: usize) -> Result<()> {
        let s = &self.setting;
        let bad = |reason: String| Err(Error::invalid("run record", format!("{}: {reason}", self.run_id)));
        let pool = s.cycles_per_pr * n;
        match s.mode {
            Mode::Individual | Mode::Global => {
                if let Some(p) = self.prs.iter().find(|p| p.cycles.len() > s.cycles_per_pr) {
                    return bad(format!("PR {} used {} cycles", p.ordinal, p.cycles.len()));
                }
                if !self.pooled_cycles.is_empty() {
                    return bad("pooled cycles outside PRD mode".into());
                }
            }
            Mode::Prd => {
                if self.pooled_cycles.len() > pool {
                    return bad(format!("{} pooled cycles exceed {pool}", self.pooled_cycles.len()));
                }
                if self.prs.iter().any(|p| !p.cycles.is_empty()) {
                    return bad("per-PR cycles in PRD mode".into());
                }
            }
        }
        let cycles = self.all_cycles().count();
        if cycles > pool {
            return bad(format!("{cycles} cycles exceed {pool}"));
        }
        if let Some(c) = self.all_cycles().find(|c| c.turn.iterations_used > s.iterations_per_cycle) {
            return bad(format!("cycle {} used {} iterations", c.index, c.turn.iterations_used));
        }
        let iterations: u64 = self.all_cycles().map(|c| c.turn.iterations_used as u64).sum();
        if iterations > s.iterations_per_cycle as u64 * pool as u64 {
            return bad(format!("{iterations} iterations exceed the ceiling"));
        }
        if self.task_success && !self.prs.iter().all(|p| p.pr_success) {
            return bad("task success without every PR succeeding".into());
        }
        Ok(())
    }
}

/// How one setting drives a chain.
pub trait SettingStrategy: Send + Sync {
    fn mode(&self) -> Mode;
    fn template(&self) -> &'static str;
    fn execute(&self, state: &mut RunState<'_>) -> Result<()>;
}

/// Setting strategies by name.
#[derive(Clone)]
pub struct SettingRegistry {
    strategies: BTreeMap<Mode, Arc<dyn SettingStrategy>>,
}

impl Default for SettingRegistry {
    fn default() -> Self {
        let mut r = Self { strategies: BTreeMap::new() };
        r.register(Arc::new(run::Individual));
        r.register(Arc::new(run::Global));
        r.register(Arc::new(run::Prd));
        r
    }
}

impl SettingRegistry {
    pub fn register(&mut self, s: Arc<dyn SettingStrategy>) {
        self.strategies.insert(s.mode(), s);
    }

    pub fn get(&self, mode: Mode) -> Result<Arc<dyn SettingStrategy>> {
        self.strategies.get(&mode).cloned().ok_or_else(|| Error::UnknownStrategy {
            kind: "setting",
            name: mode.to_string(),
            available: self.strategies.keys().map(|m| m.to_string()).collect::<Vec<_>>().join(", "),
        })
    }
}
