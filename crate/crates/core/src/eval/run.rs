//! Run driver: reflection cycles, the three setting strategies, and resume.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::agent::{Agent, AgentTurnRequest, AgentTurnResult, TurnContext, TurnStatus};
use super::prompt::{render, PromptSlots, GLOBAL_TEMPLATE, INDIVIDUAL_TEMPLATE, PRD_TEMPLATE};
use super::{
    cascade_suite, chain_digest, union_suite, CycleRecord, EvaluationSetting, Integrity, IntegrityEvent, Mode, PrRun,
    PrStatus, ResumeEvent, RunRecord, RunStatus, SettingRegistry, SettingStrategy, Totals,
};
use crate::error::{Error, Result};
use crate::forge::{compose_prd, TaskChain, VerificationSuite};
use crate::git::Git;
use crate::metrics::{gold_trace, EvalRow, health_snapshot, score_pr, Analyzer, HealthSnapshot, SnapshotAt};
use crate::pathrules::PathClasses;
use crate::sandbox::{RunnerProfile, Sandbox, SandboxProvider, SandboxSpec};
use crate::sandbox::runner::DEFAULT_STDERR_CAP;
use crate::store;
use crate::types::TestId;

const PROVISION_ATTEMPTS: usize = 3;

/// Everything a run needs besides the chain, setting and agent.
#[derive(Clone)]
pub struct Harness {
    pub provider: Arc<dyn SandboxProvider>,
    pub spec: SandboxSpec,
    pub profile: RunnerProfile,
    /// Host repository the chain was mined from.
    pub repo: PathBuf,
    pub classes: PathClasses,
    /// Wall-clock ceiling per agent turn.
    pub cycle_timeout: Duration,
    pub feedback_cap: usize,
    pub analyzer: Option<Arc<dyn Analyzer>>,
    pub settings: SettingRegistry,
}

impl Harness {
    pub fn new(provider: Arc<dyn SandboxProvider>, spec: SandboxSpec, repo: PathBuf, classes: PathClasses) -> Self {
        let profile = RunnerProfile::default().with_env_path(&spec.env_path);
        Self {
            provider,
            spec,
            profile,
            repo,
            classes,
            cycle_timeout: Duration::from_secs(30 * 60),
            feedback_cap: DEFAULT_STDERR_CAP,
            analyzer: None,
            settings: SettingRegistry::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Pr(usize),
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LoopEnd {
    Passed,
    Exhausted,
    Invalidated,
}

/// Mutable state of one run; strategies drive it.
pub struct RunState<'a> {
    pub harness: &'a Harness,
    pub chain: &'a TaskChain,
    pub agent: &'a dyn Agent,
    pub dir: PathBuf,
    pub record: RunRecord,
    last_save: Instant,
}

impl RunState<'_> {
    fn setting(&self) -> EvaluationSetting {
        self.record.setting
    }

    pub fn save(&mut self) -> Result<()> {
        let now = Instant::now();
        self.record.totals.wall_time_s += now.duration_since(self.last_save).as_secs_f64();
        self.last_save = now;
        refresh_totals(&mut self.record);
        store::write_json(&self.dir.join("manifest.json"), &self.record)
    }

    fn provision(&mut self) -> Result<Sandbox> {
        let h = self.harness;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match Sandbox::provision(h.provider.clone(), &h.spec, &h.repo, &self.chain.base_commit) {
                Ok(sb) => {
                    self.record.integrity.guard = sb.guard.clone();
                    return Ok(sb);
                }
                Err(Error::ProvisionFailed { retryable: true, .. }) if attempt < PROVISION_ATTEMPTS => continue,
                Err(e) => return Err(e),
            }
        }
    }

    fn freeze_tests(&self, sb: &mut Sandbox) -> Result<()> {
        let files: Vec<String> = sb.list_files()?.into_iter().filter(|f| self.harness.classes.is_test(f)).collect();
        sb.freeze_tests(&files)
    }

    /// Test files hidden from the agent: the PRs' own test files plus every
    /// file holding a test in `suite`.
    fn revoke_set(&self, prs: std::ops::RangeInclusive<usize>, suite: &[TestId]) -> Vec<String> {
        let mut files: Vec<String> = prs.flat_map(|k| self.chain.gold[k - 1].test_files.clone()).collect();
        files.extend(suite.iter().map(|t| t.file().to_string()));
        files.sort();
        files.dedup();
        files
    }

    fn cycles(&mut self, slot: Slot) -> &mut Vec<CycleRecord> {
        match slot {
            Slot::Pr(k) => &mut self.record.prs[k - 1].cycles,
            Slot::Pooled => &mut self.record.pooled_cycles,
        }
    }

    fn ensure_pr(&mut self, k: usize) -> Result<()> {
        if self.record.prs.len() < k {
            let req = &self.chain.requests[k - 1];
            self.record.prs.push(PrRun {
                ordinal: k,
                pr_number: req.pr_number,
                commit_id: req.commit_id.clone(),
                status: PrStatus::Running,
                pr_success: false,
                start_digest: None,
                cycles: vec![],
                eval: None,
                health: None,
                flags: vec![],
            });
            self.save()?;
        }
        Ok(())
    }

    fn infrastructure_failure(&mut self, k: usize, e: &Error) -> Result<()> {
        let pr = &mut self.record.prs[k - 1];
        pr.status = PrStatus::InfrastructureFailed;
        pr.flags.push(format!("infrastructure: {e}"));
        self.record.flags.push(format!("PR {k} excluded: infrastructure failure"));
        self.save()
    }

    fn abort_remaining(&mut self, from: usize) -> Result<()> {
        for k in from..=self.chain.n {
            self.ensure_pr(k)?;
            if self.record.prs[k - 1].status == PrStatus::Running {
                self.mark_aborted(k);
            }
        }
        self.save()
    }

    /// Suite a PR is scored against in this run's setting.
    fn scoring_suite(&self, k: usize) -> VerificationSuite {
        match self.setting().mode {
            Mode::Global => cascade_suite(&self.chain.suites, k),
            Mode::Individual | Mode::Prd => self.chain.suites[k - 1].clone(),
        }
    }

    /// Marks PR `k` aborted; its whole suite counts as failed.
    fn mark_aborted(&mut self, k: usize) {
        let suite = self.scoring_suite(k);
        let pr = &mut self.record.prs[k - 1];
        pr.status = PrStatus::Aborted;
        pr.pr_success = false;
        pr.eval = Some(EvalRow {
            f2p_passed: 0,
            f2p_total: suite.fail_to_pass.len(),
            p2p_passed: 0,
            p2p_total: suite.pass_to_pass.len(),
            pr_success: false,
            missing: vec![],
            cycles_used: pr.cycles.len(),
            cost_usd: sum_costs(pr.cycles.iter()),
        });
    }

    /// Replays a recorded workspace and checks its digest.
    fn restore(&mut self, sb: &Sandbox, cycle: &CycleRecord) -> Result<()> {
        let path = self.dir.join(&cycle.patch_file);
        let patch = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        sb.apply_patch(&patch)?;
        let digest = sb.tree_digest()?;
        if digest != cycle.tree_digest {
            return Err(Error::invalid(
                "resume",
                format!("workspace digest {digest} does not match recorded {} ({})", cycle.tree_digest, cycle.patch_file),
            ));
        }
        self.record.resumes.push(ResumeEvent { pr: cycle.pr, cycle: cycle.index, tree_digest: digest });
        self.save()
    }

    fn future_objects(&self, sb: &Sandbox) -> Result<Vec<String>> {
        let ids: Vec<&str> = self.chain.gold.iter().map(|g| g.commit_id.as_str()).collect();
        let out = sb.sh("for c; do git -c safe.directory='*' cat-file -e \"$c\" 2>/dev/null && echo \"$c\"; done; true", &ids)?;
        Ok(String::from_utf8_lossy(&out.stdout).lines().map(str::to_string).collect())
    }

    #[allow(clippy::too_many_arguments)]
    fn cycle(
        &mut self,
        sb: &mut Sandbox,
        slot: Slot,
        index: usize,
        suite: &[TestId],
        revoke: &[String],
        template: &str,
        task_text: &str,
        feedback: &str,
        session: &str,
    ) -> Result<CycleRecord> {
        let setting = self.setting();
        let pr = match slot {
            Slot::Pr(k) => Some(k),
            Slot::Pooled => None,
        };
        let rel = match pr {
            Some(k) => format!("pr{k}/cycle{index}"),
            None => format!("pooled/cycle{index}"),
        };
        let dir = self.dir.join(&rel);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let started = Instant::now();
        let workdir = sb.workspace().to_string_lossy().to_string();
        let prompt = render(
            template,
            &PromptSlots { workdir: &workdir, task_text, env_path: &self.harness.spec.env_path, feedback },
        );
        let prompt_path = dir.join("prompt.txt");
        std::fs::write(&prompt_path, &prompt).map_err(|e| Error::io(&prompt_path, e))?;

        sb.revoke_tests(revoke)?;
        sb.prepare_agent_turn()?;
        let req = AgentTurnRequest {
            workspace_root: sb.workspace().to_path_buf(),
            prompt,
            feedback: feedback.to_string(),
            env_path: self.harness.spec.env_path.clone(),
            max_iterations: setting.iterations_per_cycle,
            session_token: session.to_string(),
            task_id: self.chain.task_id.clone(),
            setting: setting.mode,
            pr_ordinal: pr,
            cycle: index,
        };
        let ctx = TurnContext { sandbox: sb, chain: self.chain, transcript_dir: &dir, timeout: self.harness.cycle_timeout };
        let mut turn = self.agent.turn(&req, &ctx).unwrap_or_else(|e| AgentTurnResult::error(e.to_string()));
        let mut flags = Vec::new();
        if turn.iterations_used > setting.iterations_per_cycle {
            flags.push(format!("iterations-overreported: {}", turn.iterations_used));
            turn.iterations_used = setting.iterations_per_cycle;
        }
        if turn.cost_usd.is_some_and(|c| !c.is_finite() || c < 0.0) {
            flags.push("invalid-cost".into());
            turn.cost_usd = None;
        }
        if turn.status == TurnStatus::AgentError && turn.diagnostic.is_none() {
            turn.diagnostic = Some("unspecified agent error".into());
        }

        let mut events = Vec::new();
        match sb.restore_revoked() {
            Ok(()) => {}
            Err(Error::RestoreMismatch { file }) => events.push(("restore-mismatch", file)),
            Err(e) => return Err(e),
        }
        events.extend(sb.tamper_check()?.into_iter().map(|f| ("tamper", f)));
        events.extend(self.future_objects(sb)?.into_iter().map(|c| ("future-object", c)));
        for (kind, detail) in &events {
            self.record.integrity.events.push(IntegrityEvent { pr, cycle: index, kind: kind.to_string(), detail: detail.clone() });
        }
        let report = if events.is_empty() {
            Some(sb.run_tests(suite, &self.harness.profile, Some(&dir.join("tests")))?)
        } else {
            flags.push("cheat-suspected".into());
            None
        };
        let tree_digest = sb.tree_digest()?;
        let patch = sb.workspace_patch()?;
        let patch_file = format!("{rel}/workspace.patch");
        store::write_atomic(&self.dir.join(&patch_file), patch.as_bytes())?;
        Ok(CycleRecord {
            index,
            pr,
            turn,
            report,
            tree_digest,
            patch_file,
            wall_time_s: started.elapsed().as_secs_f64(),
            flags,
        })
    }

    /// Runs cycles until the suite passes, the budget is spent, or the run is
    /// invalidated. Continues after any cycles already recorded in `slot`.
    #[allow(clippy::too_many_arguments)]
    fn run_cycles(
        &mut self,
        sb: &mut Sandbox,
        slot: Slot,
        suite: &[TestId],
        revoke: &[String],
        template: &str,
        task_text: &str,
        session: &str,
        budget: usize,
    ) -> Result<LoopEnd> {
        let cap = self.harness.feedback_cap;
        if let Some(last) = self.cycles(slot).last() {
            if last.flags.iter().any(|f| f == "cheat-suspected") {
                return Ok(LoopEnd::Invalidated);
            }
            if last.passed() {
                return Ok(LoopEnd::Passed);
            }
        }
        let mut feedback = self.cycles(slot).last().and_then(|c| c.report.as_ref()).map(|r| r.failure_feedback(cap)).unwrap_or_default();
        while self.cycles(slot).len() < budget {
            let index = self.cycles(slot).len() + 1;
            let rec = self.cycle(sb, slot, index, suite, revoke, template, task_text, &feedback, session)?;
            let invalid = rec.flags.iter().any(|f| f == "cheat-suspected");
            let passed = rec.passed();
            feedback = rec.report.as_ref().map(|r| r.failure_feedback(cap)).unwrap_or_default();
            self.cycles(slot).push(rec);
            if invalid {
                self.record.status = RunStatus::Invalidated;
                if !self.record.flags.iter().any(|f| f == "cheat-suspected") {
                    self.record.flags.push("cheat-suspected".into());
                }
            }
            self.save()?;
            if invalid {
                return Ok(LoopEnd::Invalidated);
            }
            if passed {
                return Ok(LoopEnd::Passed);
            }
        }
        Ok(LoopEnd::Exhausted)
    }

    fn snapshot(&self, sb: &Sandbox, k: usize, cycle: usize) -> Option<HealthSnapshot> {
        let analyzer = self.harness.analyzer.as_ref()?;
        let at = Some(SnapshotAt { run_id: self.record.run_id.clone(), pr: k, cycle });
        let dir = match tempfile::tempdir() {
            Ok(d) => d,
            Err(e) => return Some(HealthSnapshot::unavailable(analyzer.name(), e.to_string(), at)),
        };
        let root = dir.path().join("ws");
        match sb.export_workspace(&root) {
            Ok(()) => Some(health_snapshot(&root, &self.harness.classes, analyzer.as_ref(), at)),
            Err(e) => Some(HealthSnapshot::unavailable(analyzer.name(), e.to_string(), at)),
        }
    }

    fn finish_pr(&mut self, sb: &Sandbox, k: usize, suite: &VerificationSuite, end: LoopEnd) -> Result<()> {
        let health = self.snapshot(sb, k, self.record.prs[k - 1].cycles.len());
        self.record.prs[k - 1].health = health;
        if end == LoopEnd::Invalidated {
            self.mark_aborted(k);
            return self.save();
        }
        let last = self.record.prs[k - 1].cycles.last().and_then(|c| c.report.clone());
        match last {
            Some(report) => {
                let pr = &mut self.record.prs[k - 1];
                let mut row = score_pr(&report, suite);
                row.cycles_used = pr.cycles.len();
                row.cost_usd = sum_costs(pr.cycles.iter());
                if !row.missing.is_empty() {
                    pr.flags.push(format!("missing outcomes: {}", row.missing.len()));
                }
                pr.pr_success = row.pr_success;
                pr.status = if row.pr_success { PrStatus::Succeeded } else { PrStatus::Failed };
                pr.eval = Some(row);
            }
            None => {
                self.mark_aborted(k);
                let pr = &mut self.record.prs[k - 1];
                pr.status = PrStatus::Failed;
                pr.flags.push("no test report".into());
            }
        }
        self.save()
    }
}

fn sum_costs<'a>(cycles: impl Iterator<Item = &'a CycleRecord>) -> Option<f64> {
    let mut total = 0.0;
    let mut any = false;
    for c in cycles {
        total += c.turn.cost_usd?;
        any = true;
    }
    any.then_some(total)
}

fn refresh_totals(r: &mut RunRecord) {
    let wall = r.totals.wall_time_s;
    r.totals = Totals {
        cycles: r.all_cycles().count(),
        iterations: r.all_cycles().map(|c| c.turn.iterations_used as u64).sum(),
        cost_usd: sum_costs(r.all_cycles()),
        wall_time_s: wall,
    };
}

/// Sandbox at the gold state preceding PR `k`, committed so later patches
/// are relative to it.
fn gold_state(state: &mut RunState<'_>, k: usize) -> Result<Sandbox> {
    let sb = state.provision()?;
    for g in &state.chain.gold[..k - 1] {
        sb.apply_patch(&g.fix_patch)?;
        sb.apply_patch(&g.test_patch)?;
    }
    if k > 1 {
        sb.commit_all(&format!("gold state before PR {k}"))?;
    }
    Ok(sb)
}

fn expected_gold_tree(state: &RunState<'_>, k: usize) -> Result<String> {
    let git = Git::open(&state.harness.repo)?;
    let patches: Vec<&str> = state.chain.gold[..k - 1].iter().flat_map(|g| [g.fix_patch.as_str(), g.test_patch.as_str()]).collect();
    if patches.is_empty() {
        return git.tree_of(state.chain.base_commit.as_str());
    }
    git.apply_to_tree(&state.chain.base_commit, &patches)
}

/// Fresh sandbox per PR at the gold state; the PR's own suite only.
pub struct Individual;

impl SettingStrategy for Individual {
    fn mode(&self) -> Mode {
        Mode::Individual
    }

    fn template(&self) -> &'static str {
        INDIVIDUAL_TEMPLATE
    }

    fn execute(&self, state: &mut RunState<'_>) -> Result<()> {
        let n = state.chain.n;
        for k in 1..=n {
            state.ensure_pr(k)?;
            if state.record.prs[k - 1].status != PrStatus::Running {
                continue;
            }
            let resume_from = state.record.prs[k - 1].cycles.last().cloned();
            let mut sb = match gold_state(state, k) {
                Ok(sb) => sb,
                Err(e) => {
                    state.infrastructure_failure(k, &e)?;
                    continue;
                }
            };
            if state.record.prs[k - 1].start_digest.is_none() {
                let digest = sb.tree_digest()?;
                let expected = expected_gold_tree(state, k)?;
                let pr = &mut state.record.prs[k - 1];
                if digest != expected {
                    pr.flags.push(format!("start digest {digest} differs from gold state {expected}"));
                }
                pr.start_digest = Some(digest);
            }
            match &resume_from {
                Some(c) => state.restore(&sb, c)?,
                None => {
                    if let Err(e) = sb.apply_patch(&state.chain.gold[k - 1].test_patch) {
                        state.infrastructure_failure(k, &e)?;
                        continue;
                    }
                }
            }
            state.freeze_tests(&mut sb)?;
            let suite = state.chain.suites[k - 1].clone();
            let ids = suite.all();
            let revoke = state.revoke_set(k..=k, &ids);
            let task_text = state.chain.requests[k - 1].text();
            let session = format!("{}-pr{k}", state.record.run_id);
            let budget = state.setting().cycles_per_pr;
            let end = state.run_cycles(&mut sb, Slot::Pr(k), &ids, &revoke, self.template(), &task_text, &session, budget)?;
            state.finish_pr(&sb, k, &suite, end)?;
            sb.destroy()?;
            if end == LoopEnd::Invalidated {
                state.abort_remaining(k + 1)?;
                break;
            }
        }
        Ok(())
    }
}

/// One persistent sandbox; suites cascade.
pub struct Global;

impl SettingStrategy for Global {
    fn mode(&self) -> Mode {
        Mode::Global
    }

    fn template(&self) -> &'static str {
        GLOBAL_TEMPLATE
    }

    fn execute(&self, state: &mut RunState<'_>) -> Result<()> {
        let n = state.chain.n;
        let mut sb = match state.provision() {
            Ok(sb) => sb,
            Err(e) => {
                for k in 1..=n {
                    state.ensure_pr(k)?;
                    state.infrastructure_failure(k, &e)?;
                }
                state.record.status = RunStatus::Aborted;
                return Ok(());
            }
        };
        if let Some(last) = state.record.prs.iter().flat_map(|p| p.cycles.last()).last().cloned() {
            state.restore(&sb, &last)?;
        }
        let session = state.record.run_id.clone();
        for k in 1..=n {
            state.ensure_pr(k)?;
            if state.record.prs[k - 1].status != PrStatus::Running {
                continue;
            }
            if state.record.prs[k - 1].cycles.is_empty() {
                state.record.prs[k - 1].start_digest = Some(sb.tree_digest()?);
                if let Err(e) = sb.apply_patch(&state.chain.gold[k - 1].test_patch) {
                    state.infrastructure_failure(k, &e)?;
                    continue;
                }
            }
            state.freeze_tests(&mut sb)?;
            let suite = cascade_suite(&state.chain.suites, k);
            let ids = suite.all();
            let revoke = state.revoke_set(1..=k, &ids);
            let task_text = state.chain.requests[k - 1].text();
            let budget = state.setting().cycles_per_pr;
            let end = state.run_cycles(&mut sb, Slot::Pr(k), &ids, &revoke, self.template(), &task_text, &session, budget)?;
            state.finish_pr(&sb, k, &suite, end)?;
            if end == LoopEnd::Invalidated {
                state.abort_remaining(k + 1)?;
                break;
            }
        }
        sb.destroy()
    }
}

/// All requests at once, pooled budget, scored at the final state.
pub struct Prd;

impl SettingStrategy for Prd {
    fn mode(&self) -> Mode {
        Mode::Prd
    }

    fn template(&self) -> &'static str {
        PRD_TEMPLATE
    }

    fn execute(&self, state: &mut RunState<'_>) -> Result<()> {
        let n = state.chain.n;
        let infra = |state: &mut RunState<'_>, e: &Error| -> Result<()> {
            for k in 1..=n {
                state.ensure_pr(k)?;
                state.infrastructure_failure(k, e)?;
            }
            state.record.status = RunStatus::Aborted;
            state.save()
        };
        let mut sb = match state.provision() {
            Ok(sb) => sb,
            Err(e) => return infra(state, &e),
        };
        let start_digest = sb.tree_digest()?;
        match state.record.pooled_cycles.last().cloned() {
            Some(last) => state.restore(&sb, &last)?,
            None => {
                for g in &state.chain.gold {
                    if let Err(e) = sb.apply_patch(&g.test_patch) {
                        return infra(state, &e);
                    }
                }
            }
        }
        state.freeze_tests(&mut sb)?;
        let ids = union_suite(&state.chain.suites);
        let revoke = state.revoke_set(1..=n, &ids);
        let task_text = compose_prd(state.chain);
        let session = state.record.run_id.clone();
        let budget = state.setting().cycles_per_pr * n;
        let end = state.run_cycles(&mut sb, Slot::Pooled, &ids, &revoke, self.template(), &task_text, &session, budget)?;

        let pooled = state.record.pooled_cycles.len();
        let cost = sum_costs(state.record.pooled_cycles.iter());
        let health = state.snapshot(&sb, n, pooled);
        let final_report = state.record.pooled_cycles.last().and_then(|c| c.report.clone());
        for k in 1..=n {
            state.ensure_pr(k)?;
            state.record.prs[k - 1].start_digest = Some(start_digest.clone());
            if k == n {
                state.record.prs[k - 1].health = health.clone();
            }
            match (&final_report, end) {
                (Some(report), LoopEnd::Passed | LoopEnd::Exhausted) => {
                    let mut row = score_pr(report, &state.chain.suites[k - 1]);
                    row.cycles_used = pooled;
                    row.cost_usd = if k == 1 { cost } else { None };
                    let pr = &mut state.record.prs[k - 1];
                    pr.pr_success = row.pr_success;
                    pr.status = if row.pr_success { PrStatus::Succeeded } else { PrStatus::Failed };
                    pr.eval = Some(row);
                }
                _ => {
                    state.mark_aborted(k);
                    let pr = &mut state.record.prs[k - 1];
                    if let Some(row) = pr.eval.as_mut() {
                        row.cycles_used = pooled;
                        row.cost_usd = if k == 1 { cost } else { None };
                    }
                    if end != LoopEnd::Invalidated {
                        pr.status = PrStatus::Failed;
                        pr.flags.push("no test report".into());
                    }
                }
            }
        }
        state.save()?;
        sb.destroy()
    }
}

fn new_record(run_id: &str, chain: &TaskChain, setting: &EvaluationSetting, agent: &dyn Agent) -> Result<RunRecord> {
    Ok(RunRecord {
        run_id: run_id.to_string(),
        task_id: chain.task_id.clone(),
        repo: chain.repo.clone(),
        chain_digest: chain_digest(chain)?,
        setting: *setting,
        agent: agent.name(),
        status: RunStatus::Running,
        prs: vec![],
        pooled_cycles: vec![],
        task_success: false,
        totals: Totals::default(),
        integrity: Integrity::default(),
        base_health: None,
        gold_health: vec![],
        resumes: vec![],
        flags: vec![],
    })
}

/// Runs (or resumes) `chain` under `setting` with `agent`, writing
/// `<runs_root>/<run_id>/manifest.json` after every cycle.
pub fn run_chain(
    harness: &Harness,
    chain: &TaskChain,
    setting: &EvaluationSetting,
    agent: &dyn Agent,
    runs_root: &Path,
    run_id: &str,
    resume: bool,
) -> Result<RunRecord> {
    setting.validate()?;
    chain.check(1)?;
    let dir = runs_root.join(run_id);
    let manifest = dir.join("manifest.json");
    let record = if resume {
        let rec: RunRecord = store::read_json(&manifest)?;
        let digest = chain_digest(chain)?;
        if rec.chain_digest != digest || rec.setting != *setting || rec.agent != agent.name() {
            return Err(Error::invalid("resume", format!("{run_id} was recorded for a different task, setting or agent")));
        }
        if rec.status != RunStatus::Running {
            return Ok(rec);
        }
        rec
    } else {
        if manifest.exists() {
            return Err(Error::invalid("run", format!("{run_id} already exists; resume it or pick another id")));
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        new_record(run_id, chain, setting, agent)?
    };
    let strategy = harness.settings.get(setting.mode)?;
    let mut state = RunState { harness, chain, agent, dir: dir.clone(), record, last_save: Instant::now() };

    if !resume {
        if let Some(analyzer) = &harness.analyzer {
            match Git::open(&harness.repo).and_then(|git| gold_trace(&git, chain, &harness.classes, analyzer.as_ref())) {
                Ok((base, gold)) => {
                    state.record.base_health = Some(base);
                    state.record.gold_health = gold;
                }
                Err(e) => state.record.flags.push(format!("gold health trace unavailable: {e}")),
            }
        }
    }
    state.save()?;

    strategy.execute(&mut state)?;

    let rec = &mut state.record;
    rec.task_success = rec.prs.len() == chain.n && rec.prs.iter().all(|p| p.pr_success);
    if rec.status == RunStatus::Running {
        rec.status = RunStatus::Completed;
    }
    if rec.prs.iter().any(|p| p.status == PrStatus::InfrastructureFailed) && !rec.flags.iter().any(|f| f == "incomplete") {
        rec.flags.push("incomplete".into());
    }
    state.save()?;
    state.record.check_budget(chain.n)?;
    store::write_json(&dir.join("record.json"), &state.record)?;
    Ok(state.record)
}
