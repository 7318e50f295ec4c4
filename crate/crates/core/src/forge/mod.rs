//! Task chains built from admitted PRs.

pub mod describe;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::git::Git;
use crate::miner::{EvaluationWindow, PullRequestRecord};
use crate::sandbox::{Sandbox, SandboxProvider, SandboxSpec};
use crate::types::{CommitId, TestId};

use describe::{extract_definition_description, join_request, leaks_patch, synthesize_task_description};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub pr_number: u64,
    pub commit_id: CommitId,
    pub task_description: String,
    pub definition_description: String,
}

impl Request {
    pub fn from_record(record: &PullRequestRecord) -> Self {
        Self {
            pr_number: record.pr_number,
            commit_id: record.commit_id.clone(),
            task_description: synthesize_task_description(record),
            definition_description: extract_definition_description(&record.changes),
        }
    }

    /// Both texts as the single document an agent receives.
    pub fn text(&self) -> String {
        join_request(&self.task_description, &self.definition_description)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationSuite {
    pub fail_to_pass: Vec<TestId>,
    pub pass_to_pass: Vec<TestId>,
}

impl VerificationSuite {
    pub fn all(&self) -> Vec<TestId> {
        self.fail_to_pass.iter().chain(&self.pass_to_pass).cloned().collect()
    }
}

/// Harness-only material for one PR: never shown to agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldPatch {
    pub commit_id: CommitId,
    pub fix_patch: String,
    pub test_patch: String,
    pub test_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskChain {
    pub task_id: String,
    pub repo: String,
    pub base_commit: CommitId,
    pub window: EvaluationWindow,
    pub requests: Vec<Request>,
    pub suites: Vec<VerificationSuite>,
    pub n: usize,
    pub gold: Vec<GoldPatch>,
}

impl TaskChain {
    pub fn commit_ids(&self) -> Vec<CommitId> {
        self.requests.iter().map(|r| r.commit_id.clone()).collect()
    }

    /// Structural invariants: aligned lengths and commits, n ≥ `min_len`,
    /// disjoint suites with non-empty fail-to-pass, non-empty texts, no
    /// patch content in texts.
    pub fn check(&self, min_len: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("task chain", format!("{}: {reason}", self.task_id)));
        if self.n != self.requests.len() || self.n != self.suites.len() || self.n != self.gold.len() {
            return bad("requests, suites and gold patches must all have length n".into());
        }
        if self.n < min_len.max(1) {
            return bad(format!("n = {} is below the minimum {min_len}", self.n));
        }
        for (i, ((req, suite), gold)) in self.requests.iter().zip(&self.suites).zip(&self.gold).enumerate() {
            if req.commit_id != gold.commit_id {
                return bad(format!("request {} and its gold patch name different commits", i + 1));
            }
            if suite.fail_to_pass.is_empty() {
                return bad(format!("suite {} has no fail-to-pass tests", i + 1));
            }
            let f2p: BTreeSet<&TestId> = suite.fail_to_pass.iter().collect();
            if suite.pass_to_pass.iter().any(|t| f2p.contains(t)) {
                return bad(format!("suite {} is not disjoint", i + 1));
            }
            if req.task_description.trim().is_empty() || req.definition_description.trim().is_empty() {
                return bad(format!("request {} has an empty text", i + 1));
            }
            if leaks_patch(&req.text(), &gold.fix_patch) {
                return bad(format!("request {} contains gold patch content", i + 1));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainPolicy {
    #[serde(default = "default_min")]
    pub min_len: usize,
    #[serde(default = "default_max")]
    pub max_len: usize,
    /// Allow skipping excluded PRs inside a chain when the replay still holds.
    #[serde(default = "default_true")]
    pub allow_gaps: bool,
}

fn default_min() -> usize {
    3
}
fn default_max() -> usize {
    11
}
fn default_true() -> bool {
    true
}

impl Default for ChainPolicy {
    fn default() -> Self {
        Self { min_len: default_min(), max_len: default_max(), allow_gaps: true }
    }
}

impl ChainPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.min_len < 1 || self.max_len < self.min_len {
            return Err(Error::Config(format!("chain policy needs 1 <= min_len <= max_len, got {self:?}")));
        }
        Ok(())
    }
}

/// Whether gold fix+test patches apply in order on a base commit.
pub trait ReplayCheck: Send + Sync {
    fn name(&self) -> &'static str;
    fn replays(&self, base: &CommitId, patches: &[&str]) -> Result<bool>;
}

/// Applies patches to a scratch index on the host repository.
pub struct IndexReplay {
    pub git: Git,
}

impl ReplayCheck for IndexReplay {
    fn name(&self) -> &'static str {
        "index"
    }

    fn replays(&self, base: &CommitId, patches: &[&str]) -> Result<bool> {
        match self.git.apply_to_tree(base, patches) {
            Ok(_) => Ok(true),
            Err(Error::PatchConflict { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }
}

/// Applies patches one by one inside a fresh sandbox.
pub struct SandboxReplay {
    pub provider: Arc<dyn SandboxProvider>,
    pub spec: SandboxSpec,
    pub repo: PathBuf,
}

impl ReplayCheck for SandboxReplay {
    fn name(&self) -> &'static str {
        "sandbox"
    }

    fn replays(&self, base: &CommitId, patches: &[&str]) -> Result<bool> {
        let mut sb = Sandbox::provision(self.provider.clone(), &self.spec, &self.repo, base)?;
        let mut ok = true;
        for p in patches {
            match sb.apply_patch(p) {
                Ok(_) => {}
                Err(Error::PatchConflict { .. }) => {
                    ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        sb.destroy()?;
        Ok(ok)
    }
}

/// Segment lengths for a run of `len` PRs: as even as possible, longer
/// segments first, each at most `max_len`.
pub fn even_split(len: usize, max_len: usize) -> Vec<usize> {
    if len == 0 || max_len == 0 {
        return vec![];
    }
    let k = len.div_ceil(max_len);
    let (q, r) = (len / k, len % k);
    (0..k).map(|i| q + usize::from(i < r)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct ForgeOutput {
    pub chains: Vec<TaskChain>,
    /// Admitted PRs that ended up in no chain.
    pub leftovers: Vec<CommitId>,
}

fn task_label(r: &PullRequestRecord) -> String {
    if r.pr_number > 0 {
        r.pr_number.to_string()
    } else {
        r.commit_id.short().to_string()
    }
}

fn patches_of(records: &[&PullRequestRecord]) -> Vec<String> {
    records.iter().flat_map(|r| [r.fix_patch.clone(), r.test_patch.clone()]).collect()
}

fn replays(check: &dyn ReplayCheck, records: &[&PullRequestRecord]) -> Result<bool> {
    let patches = patches_of(records);
    let refs: Vec<&str> = patches.iter().map(String::as_str).collect();
    check.replays(&records[0].parent_id, &refs)
}

pub fn make_chain(repo: &str, window: &EvaluationWindow, records: &[&PullRequestRecord]) -> TaskChain {
    let first = records[0];
    let last = records[records.len() - 1];
    TaskChain {
        task_id: format!("{repo}__{}-{}", task_label(first), task_label(last)),
        repo: repo.to_string(),
        base_commit: first.parent_id.clone(),
        window: *window,
        requests: records.iter().map(|r| Request::from_record(r)).collect(),
        suites: records
            .iter()
            .map(|r| VerificationSuite { fail_to_pass: r.fail_to_pass.clone(), pass_to_pass: r.pass_to_pass.clone() })
            .collect(),
        n: records.len(),
        gold: records
            .iter()
            .map(|r| GoldPatch {
                commit_id: r.commit_id.clone(),
                fix_patch: r.fix_patch.clone(),
                test_patch: r.test_patch.clone(),
                test_files: r.test_files.clone(),
            })
            .collect(),
    }
}

/// Groups admitted records (mainline order) into chains.
///
/// `mainline` lists every mined commit in order so gaps can be recognised;
/// a gap is bridged only when the policy allows it and the replay check
/// passes. Runs longer than `max_len` are split evenly; segments shorter
/// than `min_len` become leftovers.
pub fn build_chains(
    repo: &str,
    admitted: &[PullRequestRecord],
    mainline: &[CommitId],
    window: &EvaluationWindow,
    policy: &ChainPolicy,
    check: &dyn ReplayCheck,
) -> Result<ForgeOutput> {
    policy.validate()?;
    let position = |c: &CommitId| mainline.iter().position(|m| m == c);
    let mut records: Vec<&PullRequestRecord> = admitted.iter().filter(|r| window.contains(r.merged_at)).collect();
    records.sort_by_key(|r| (position(&r.commit_id).unwrap_or(usize::MAX), r.merged_at));

    let mut runs: Vec<Vec<&PullRequestRecord>> = Vec::new();
    let mut current: Vec<&PullRequestRecord> = Vec::new();
    for r in records {
        let Some(last) = current.last() else {
            current.push(r);
            continue;
        };
        let gap = match (position(&last.commit_id), position(&r.commit_id)) {
            (Some(a), Some(b)) => b != a + 1,
            _ => r.parent_id != last.commit_id,
        };
        let extend = r.merged_at > last.merged_at && (!gap || policy.allow_gaps) && {
            let mut trial = current.clone();
            trial.push(r);
            !gap || replays(check, &trial)?
        };
        if extend {
            current.push(r);
        } else {
            runs.push(std::mem::take(&mut current));
            current.push(r);
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }

    let mut out = ForgeOutput::default();
    for run in runs {
        let mut start = 0;
        for len in even_split(run.len(), policy.max_len) {
            let segment = &run[start..start + len];
            start += len;
            let ok = len >= policy.min_len && (segment.len() == 1 || replays(check, segment)?);
            if ok {
                out.chains.push(make_chain(repo, window, segment));
            } else {
                out.leftovers.extend(segment.iter().map(|r| r.commit_id.clone()));
            }
        }
    }
    Ok(out)
}

/// The chain's requests as one document, with a separator naming each
/// following PR's ordinal between consecutive blocks.
pub fn compose_prd(chain: &TaskChain) -> String {
    let n = chain.requests.len();
    let mut out = String::new();
    for (i, req) in chain.requests.iter().enumerate() {
        if i > 0 {
            out.push_str(&prd_separator(i + 1, n));
        }
        out.push_str(&req.text());
    }
    out
}

pub fn prd_separator(ordinal: usize, n: usize) -> String {
    format!("\n\n=== PR {ordinal} of {n} ===\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_split_balances() {
        assert_eq!(even_split(13, 11), vec![7, 6]);
        assert_eq!(even_split(7, 11), vec![7]);
        assert_eq!(even_split(22, 11), vec![11, 11]);
        assert_eq!(even_split(23, 11), vec![8, 8, 7]);
        assert!(even_split(0, 11).is_empty());
        for len in 1..60 {
            let s = even_split(len, 11);
            assert_eq!(s.iter().sum::<usize>(), len);
            assert!(s.iter().all(|&x| x <= 11));
            assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn policy_bounds() {
        assert!(ChainPolicy::default().validate().is_ok());
        assert!(ChainPolicy { min_len: 5, max_len: 4, allow_gaps: true }.validate().is_err());
    }
}
