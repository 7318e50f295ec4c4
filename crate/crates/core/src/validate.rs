//! Test-driven admission of mined PRs.
//!
//! Step 1 applies only the test patch at the parent commit and runs the
//! candidates; step 2 adds the fix patch in the same workspace. Contrary
//! tests are pruned, the survivors are re-run once to catch flakes, and the
//! PR is admitted only if fail-to-pass tests remain.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::Patch;
use crate::error::{Error, Result};
use crate::miner::PullRequestRecord;
use crate::pathrules::PathClasses;
use crate::sandbox::{RunnerProfile, Sandbox, SandboxProvider, SandboxSpec, SuiteReport};
use crate::types::{Category, CommitId, TestId, TestStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Admitted,
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    NoTests,
    DocsOrInfraOnly,
    Step1Violation,
    Step2Violation,
    EmptyAfterPruning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneReason {
    /// F2P already passing with only the test patch.
    PrematurePass,
    /// P2P not passing with only the test patch.
    Contrary,
    /// F2P still not passing after the fix.
    StillFailing,
    /// P2P passing before the fix and not after it.
    GoldBreaks,
    /// Status changed between the step-2 run and its re-run.
    Flaky,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrunedTest {
    pub test_id: TestId,
    pub reason: PruneReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationReport {
    pub pr: CommitId,
    pub pr_number: u64,
    pub step1: BTreeMap<TestId, TestStatus>,
    pub step2: BTreeMap<TestId, TestStatus>,
    #[serde(default)]
    pub rerun: BTreeMap<TestId, TestStatus>,
    pub pruned_f2p: Vec<PrunedTest>,
    pub pruned_p2p: Vec<PrunedTest>,
    pub final_f2p: Vec<TestId>,
    pub final_p2p: Vec<TestId>,
    pub verdict: Verdict,
    #[serde(default)]
    pub exclusion_reason: Option<ExclusionReason>,
    /// Conflict or crash detail for violations; log paths are store-relative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl ValidationReport {
    fn new(record: &PullRequestRecord) -> Self {
        Self {
            pr: record.commit_id.clone(),
            pr_number: record.pr_number,
            step1: BTreeMap::new(),
            step2: BTreeMap::new(),
            rerun: BTreeMap::new(),
            pruned_f2p: vec![],
            pruned_p2p: vec![],
            final_f2p: vec![],
            final_p2p: vec![],
            verdict: Verdict::Excluded,
            exclusion_reason: None,
            detail: None,
            flags: vec![],
        }
    }

    fn exclude(mut self, reason: ExclusionReason, detail: Option<String>) -> Self {
        self.verdict = Verdict::Excluded;
        self.exclusion_reason = Some(reason);
        self.detail = detail;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationPolicy {
    /// Exclude the PR instead of pruning when the gold fix breaks a P2P test.
    #[serde(default)]
    pub strict: bool,
    /// Extra executions of the surviving suite used for flake detection.
    #[serde(default = "default_reruns")]
    pub reruns: usize,
}

fn default_reruns() -> usize {
    1
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self { strict: false, reruns: default_reruns() }
    }
}

/// Everything a validation needs to provision and run sandboxes.
#[derive(Clone)]
pub struct Validator {
    pub provider: Arc<dyn SandboxProvider>,
    pub spec: SandboxSpec,
    pub profile: RunnerProfile,
    pub repo: PathBuf,
    pub classes: PathClasses,
    pub policy: ValidationPolicy,
    /// Raw runner logs go under `<log_root>/<commit>/<step>`.
    pub log_root: Option<PathBuf>,
}

/// Whether the PR only touches documentation or configuration, judged by
/// its classifier label or by the paths of its fix patch.
pub fn is_docs_or_infra_only(record: &PullRequestRecord, classes: &PathClasses) -> bool {
    let label = matches!(record.category, Category::Documentation | Category::Infrastructure);
    let files = Patch::parse(&record.fix_patch).map(|p| p.file_set()).unwrap_or_default();
    let paths = !files.is_empty() && files.iter().all(|f| classes.is_doc_or_config(f));
    label || paths
}

fn status_map(report: &SuiteReport) -> BTreeMap<TestId, TestStatus> {
    report.status_map()
}

impl Validator {
    fn log_dir(&self, record: &PullRequestRecord, step: &str) -> Option<PathBuf> {
        self.log_root.as_ref().map(|r| r.join(record.commit_id.short()).join(step))
    }

    fn crash_detail(&self, report: &SuiteReport, record: &PullRequestRecord, step: &str) -> Option<String> {
        let crash = report.crash.as_ref()?;
        let first = crash.lines().next().unwrap_or_default();
        Some(match self.log_root {
            Some(_) => format!("{first} (logs: {}/{step})", record.commit_id.short()),
            None => first.to_string(),
        })
    }

    fn run(&self, sb: &mut Sandbox, suite: &[TestId], record: &PullRequestRecord, step: &str) -> Result<SuiteReport> {
        sb.run_tests(suite, &self.profile, self.log_dir(record, step).as_deref())
    }

    /// Validates one record in its own sandbox.
    pub fn validate(&self, record: &PullRequestRecord) -> Result<ValidationReport> {
        let report = ValidationReport::new(record);
        if is_docs_or_infra_only(record, &self.classes) {
            return Ok(report.exclude(ExclusionReason::DocsOrInfraOnly, None));
        }
        if record.fail_to_pass.is_empty() {
            return Ok(report.exclude(ExclusionReason::NoTests, None));
        }
        let mut sb = Sandbox::provision(self.provider.clone(), &self.spec, &self.repo, &record.parent_id)?;
        let result = self.validate_in(&mut sb, record, report);
        sb.destroy()?;
        result
    }

    fn validate_in(&self, sb: &mut Sandbox, record: &PullRequestRecord, mut report: ValidationReport) -> Result<ValidationReport> {
        let candidates: Vec<TestId> = record.fail_to_pass.iter().chain(&record.pass_to_pass).cloned().collect();

        match sb.apply_patch(&record.test_patch) {
            Ok(_) => {}
            Err(e @ Error::PatchConflict { .. }) => return Ok(report.exclude(ExclusionReason::Step1Violation, Some(e.to_string()))),
            Err(e) => return Err(e),
        }
        let step1 = self.run(sb, &candidates, record, "step1")?;
        report.step1 = status_map(&step1);
        if let Some(detail) = self.crash_detail(&step1, record, "step1") {
            return Ok(report.exclude(ExclusionReason::Step1Violation, Some(detail)));
        }

        match sb.apply_patch(&record.fix_patch) {
            Ok(_) => {}
            Err(e @ Error::PatchConflict { .. }) => return Ok(report.exclude(ExclusionReason::Step2Violation, Some(e.to_string()))),
            Err(e) => return Err(e),
        }
        let step2 = self.run(sb, &candidates, record, "step2")?;
        report.step2 = status_map(&step2);
        if let Some(detail) = self.crash_detail(&step2, record, "step2") {
            return Ok(report.exclude(ExclusionReason::Step2Violation, Some(detail)));
        }

        // Stage A: contrary behaviour.
        let passed = |m: &BTreeMap<TestId, TestStatus>, t: &TestId| m.get(t).is_some_and(|s| s.is_pass());
        let mut f2p = Vec::new();
        for t in &record.fail_to_pass {
            if passed(&report.step1, t) {
                report.pruned_f2p.push(PrunedTest { test_id: t.clone(), reason: PruneReason::PrematurePass });
            } else if !passed(&report.step2, t) {
                report.pruned_f2p.push(PrunedTest { test_id: t.clone(), reason: PruneReason::StillFailing });
            } else {
                f2p.push(t.clone());
            }
        }
        let mut p2p = Vec::new();
        for t in &record.pass_to_pass {
            if !passed(&report.step1, t) {
                report.pruned_p2p.push(PrunedTest { test_id: t.clone(), reason: PruneReason::Contrary });
            } else if !passed(&report.step2, t) {
                report.pruned_p2p.push(PrunedTest { test_id: t.clone(), reason: PruneReason::GoldBreaks });
                report.flags.push(format!("gold-breaks: {t}"));
            } else {
                p2p.push(t.clone());
            }
        }
        if self.policy.strict && report.pruned_p2p.iter().any(|p| p.reason == PruneReason::GoldBreaks) {
            return Ok(report.exclude(ExclusionReason::Step2Violation, Some("gold fix breaks pass-to-pass tests".into())));
        }

        // Stage B: re-execute the survivors; any flip is a flake.
        let survivors: Vec<TestId> = f2p.iter().chain(&p2p).cloned().collect();
        if !survivors.is_empty() {
            let mut flaky: BTreeSet<TestId> = BTreeSet::new();
            for n in 0..self.policy.reruns {
                let step = if n == 0 { "rerun".to_string() } else { format!("rerun{}", n + 1) };
                let again = self.run(sb, &survivors, record, &step)?;
                let map = status_map(&again);
                for t in &survivors {
                    if map.get(t) != report.step2.get(t) {
                        flaky.insert(t.clone());
                    }
                }
                if n == 0 {
                    report.rerun = map;
                }
            }
            let prune = |list: &mut Vec<TestId>, pruned: &mut Vec<PrunedTest>| {
                list.retain(|t| {
                    let keep = !flaky.contains(t);
                    if !keep {
                        pruned.push(PrunedTest { test_id: t.clone(), reason: PruneReason::Flaky });
                    }
                    keep
                })
            };
            prune(&mut f2p, &mut report.pruned_f2p);
            prune(&mut p2p, &mut report.pruned_p2p);
        }

        report.final_f2p = f2p;
        report.final_p2p = p2p;
        if report.final_f2p.is_empty() {
            return Ok(report.exclude(ExclusionReason::EmptyAfterPruning, None));
        }
        report.verdict = Verdict::Admitted;
        Ok(report)
    }

    /// Validates records in parallel; output order follows input order.
    pub fn validate_all(&self, records: &[PullRequestRecord]) -> Result<Vec<ValidationReport>> {
        records.par_iter().map(|r| self.validate(r)).collect()
    }

    /// Re-runs both steps for an admitted record with its final suites and
    /// checks the expected pattern: F2P fail and P2P pass after the test
    /// patch, everything passes after the fix.
    pub fn replay_admitted(&self, record: &PullRequestRecord) -> Result<bool> {
        let mut sb = Sandbox::provision(self.provider.clone(), &self.spec, &self.repo, &record.parent_id)?;
        let suite: Vec<TestId> = record.fail_to_pass.iter().chain(&record.pass_to_pass).cloned().collect();
        sb.apply_patch(&record.test_patch)?;
        let step1 = sb.run_tests(&suite, &self.profile, None)?;
        let step1_ok = record.fail_to_pass.iter().all(|t| !step1.status_of(t).is_some_and(|s| s.is_pass()))
            && record.pass_to_pass.iter().all(|t| step1.status_of(t).is_some_and(|s| s.is_pass()));
        sb.apply_patch(&record.fix_patch)?;
        let step2 = sb.run_tests(&suite, &self.profile, None)?;
        sb.destroy()?;
        Ok(step1_ok && step2.all_passed())
    }
}

/// Writes the final suites of an admitted report back into its record.
pub fn admit(record: &PullRequestRecord, report: &ValidationReport) -> Option<PullRequestRecord> {
    (report.verdict == Verdict::Admitted && report.pr == record.commit_id).then(|| PullRequestRecord {
        fail_to_pass: report.final_f2p.clone(),
        pass_to_pass: report.final_p2p.clone(),
        ..record.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSummary {
    pub repo: String,
    pub mined: usize,
    pub admitted: usize,
    pub excluded: BTreeMap<ExclusionReason, usize>,
    pub pruned: BTreeMap<PruneReason, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

pub fn summarize(repo: &str, reports: &[ValidationReport]) -> ValidationSummary {
    let mut excluded = BTreeMap::new();
    let mut pruned = BTreeMap::new();
    for r in reports {
        if let Some(reason) = r.exclusion_reason {
            *excluded.entry(reason).or_insert(0) += 1;
        }
        for p in r.pruned_f2p.iter().chain(&r.pruned_p2p) {
            *pruned.entry(p.reason).or_insert(0) += 1;
        }
    }
    let admitted = reports.iter().filter(|r| r.verdict == Verdict::Admitted).count();
    let flags = if admitted == 0 { vec!["empty".to_string()] } else { vec![] };
    ValidationSummary { repo: repo.to_string(), mined: reports.len(), admitted, excluded, pruned, flags }
}

/// Log root used by the CLI for a repository's validation logs.
pub fn log_root(out_root: &Path, repo: &str) -> PathBuf {
    out_root.join("validated").join("logs").join(repo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reasons_serialize_kebab_case() {
        assert_eq!(serde_json::to_string(&ExclusionReason::DocsOrInfraOnly).unwrap(), "\"docs-or-infra-only\"");
        assert_eq!(serde_json::to_string(&PruneReason::PrematurePass).unwrap(), "\"premature-pass\"");
        assert_eq!(serde_json::to_string(&ExclusionReason::EmptyAfterPruning).unwrap(), "\"empty-after-pruning\"");
    }

    #[test]
    fn summary_counts_and_flags_empty() {
        let id = CommitId::parse(&"a".repeat(40)).unwrap();
        let mut r = ValidationReport {
            pr: id,
            pr_number: 1,
            step1: BTreeMap::new(),
            step2: BTreeMap::new(),
            rerun: BTreeMap::new(),
            pruned_f2p: vec![PrunedTest { test_id: "t.py::a".into(), reason: PruneReason::Flaky }],
            pruned_p2p: vec![],
            final_f2p: vec![],
            final_p2p: vec![],
            verdict: Verdict::Excluded,
            exclusion_reason: Some(ExclusionReason::EmptyAfterPruning),
            detail: None,
            flags: vec![],
        };
        let s = summarize("x", std::slice::from_ref(&r));
        assert_eq!(s.admitted, 0);
        assert_eq!(s.flags, vec!["empty".to_string()]);
        assert_eq!(s.pruned[&PruneReason::Flaky], 1);
        r.verdict = Verdict::Admitted;
        r.exclusion_reason = None;
        let s = summarize("x", &[r]);
        assert!(s.flags.is_empty() && s.excluded.is_empty());
    }
}
