//! Mining PR records from a repository's mainline history.

pub mod classify;
pub mod discovery;
pub mod symbols;
pub mod texts;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::diff::{split_patch, Patch};
use crate::error::{Error, Result};
use crate::git::Git;
use crate::pathrules::PathClasses;
use crate::types::{Category, CommitId, Confidence, TestId, Timestamp};

use classify::{classify_pr, Classifier};
use discovery::{derive_candidate_tests, sibling_test_files, StaticDiscovery, TestDiscovery};
use symbols::{extract_file_changes, ExtractorRegistry, SymbolChange};
use texts::{harvest_texts, MetadataSource, TextBlock};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepositoryRef {
    /// Short name used in artifact paths and task ids.
    pub name: String,
    pub root_path: PathBuf,
    pub default_branch: String,
    pub test_path_rules: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationWindow {
    pub t_start: Timestamp,
    pub t_end: Timestamp,
}

impl EvaluationWindow {
    pub fn new(t_start: Timestamp, t_end: Timestamp) -> Result<Self> {
        if t_start >= t_end {
            return Err(Error::invalid("evaluation window", "t_start must precede t_end"));
        }
        Ok(Self { t_start, t_end })
    }

    /// Inclusive on both ends.
    pub fn contains(&self, t: Timestamp) -> bool {
        self.t_start <= t && t <= self.t_end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeCandidate {
    pub commit_id: CommitId,
    pub parent_id: CommitId,
    pub merged_at: Timestamp,
    /// Position on the first-parent chain, oldest first.
    pub mainline_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullRequestRecord {
    pub commit_id: CommitId,
    pub parent_id: CommitId,
    pub pr_number: u64,
    pub merged_at: Timestamp,
    pub all_texts: Vec<TextBlock>,
    pub changed_files: Vec<String>,
    pub test_files: Vec<String>,
    pub changes: Vec<SymbolChange>,
    pub fix_patch: String,
    pub test_patch: String,
    pub fail_to_pass: Vec<TestId>,
    pub pass_to_pass: Vec<TestId>,
    pub category: Category,
    pub category_confidence: Confidence,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl PullRequestRecord {
    pub fn message(&self) -> &str {
        self.all_texts.first().map(|b| b.text.as_str()).unwrap_or_default()
    }

    /// Checks the structural invariants that hold for every mined record.
    pub fn check_invariants(&self, classes: &PathClasses) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("pull request record", format!("{}: {reason}", self.commit_id.short())));
        let fix = Patch::parse(&self.fix_patch)?.file_set();
        let test = Patch::parse(&self.test_patch)?.file_set();
        if !fix.is_disjoint(&test) {
            return bad("fix and test patches share files".into());
        }
        let changed: BTreeSet<&String> = self.changed_files.iter().collect();
        if !self.test_files.iter().all(|f| changed.contains(f)) {
            return bad("test_files not within changed_files".into());
        }
        if let Some(f) = test.iter().find(|f| !classes.is_test(f)) {
            return bad(format!("test patch file {f} does not match the test rules"));
        }
        let f2p: BTreeSet<&TestId> = self.fail_to_pass.iter().collect();
        if self.pass_to_pass.iter().any(|t| f2p.contains(t)) {
            return bad("fail_to_pass and pass_to_pass overlap".into());
        }
        if self.all_texts.is_empty() {
            return bad("all_texts is empty".into());
        }
        Ok(())
    }
}

/// First-parent mainline commits inside `window` with a non-empty diff,
/// oldest first, keeping only the most recent `limit`.
pub fn enumerate_merge_candidates(git: &Git, branch: &str, window: &EvaluationWindow, limit: usize) -> Result<Vec<MergeCandidate>> {
    if limit == 0 {
        return Err(Error::invalid("limit", "must be at least 1"));
    }
    let log = git.first_parent_log(branch)?;
    let mut out = Vec::new();
    for (index, c) in log.iter().enumerate() {
        let Some(parent) = c.parents.first() else { continue };
        if !window.contains(c.committed_at) {
            continue;
        }
        if index > 0 && log[index - 1].tree == c.tree {
            continue;
        }
        out.push(MergeCandidate {
            commit_id: c.id.clone(),
            parent_id: parent.clone(),
            merged_at: c.committed_at,
            mainline_index: index,
        });
    }
    out.sort_by(|a, b| a.merged_at.cmp(&b.merged_at).then(a.mainline_index.cmp(&b.mainline_index)));
    if out.len() > limit {
        out.drain(..out.len() - limit);
    }
    Ok(out)
}

/// `(#123)` in the subject line, else 0.
pub fn parse_pr_number(message: &str) -> u64 {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\(#(\d+)\)").expect("static regex"));
    let subject = message.lines().next().unwrap_or_default();
    re.captures_iter(subject)
        .last()
        .and_then(|c| c[1].parse().ok())
        .unwrap_or(0)
}

/// Declaration changes of every file in `fix_patch`, comparing the two
/// snapshots. Files without a registered extractor are reported in the
/// returned warnings and contribute nothing.
pub fn extract_symbol_changes(
    git: &Git,
    before: &CommitId,
    after: &CommitId,
    fix_patch: &Patch,
    extractors: &ExtractorRegistry,
) -> Result<(Vec<SymbolChange>, Vec<String>)> {
    let mut changes = Vec::new();
    let mut warnings = Vec::new();
    for file in &fix_patch.files {
        if file.binary {
            continue;
        }
        let extractor = match extractors.for_path(file.path()) {
            Ok(e) => e,
            Err(e) => {
                warnings.push(format!("{}: {e}", file.path()));
                continue;
            }
        };
        let read = |rev: &CommitId, path: Option<&String>| -> Result<Option<String>> {
            let Some(path) = path else { return Ok(None) };
            Ok(git.show_file(rev.as_str(), path)?.map(|b| String::from_utf8_lossy(&b).into_owned()))
        };
        let before_src = read(before, file.old_path.as_ref())?;
        let after_src = read(after, file.new_path.as_ref())?;
        changes.extend(extract_file_changes(extractor, file, before_src.as_deref(), after_src.as_deref()));
    }
    Ok((changes, warnings))
}

pub struct Miner {
    pub git: Git,
    pub repo: RepositoryRef,
    pub classes: PathClasses,
    pub extractors: ExtractorRegistry,
    pub discovery: Arc<dyn TestDiscovery>,
    pub metadata: Option<Arc<dyn MetadataSource>>,
    pub classifier: Option<Arc<dyn Classifier>>,
}

#[derive(Debug, Default)]
pub struct MineOutput {
    pub records: Vec<PullRequestRecord>,
    /// Candidates that could not be turned into records, with the reason.
    pub skipped: Vec<(CommitId, String)>,
}

impl Miner {
    pub fn mine(&self, window: &EvaluationWindow, limit: usize) -> Result<MineOutput> {
        let candidates = enumerate_merge_candidates(&self.git, &self.repo.default_branch, window, limit)?;
        let results: Vec<(MergeCandidate, Result<PullRequestRecord>)> =
            candidates.into_par_iter().map(|c| {
                let r = self.mine_candidate(&c);
                (c, r)
            }).collect();
        let mut out = MineOutput::default();
        for (c, r) in results {
            match r {
                Ok(rec) => out.records.push(rec),
                Err(e) if e.is_infrastructure() => return Err(e),
                Err(e) => {
                    tracing::warn!(commit = %c.commit_id, error = %e, "candidate skipped");
                    out.skipped.push((c.commit_id, e.to_string()));
                }
            }
        }
        Ok(out)
    }

    pub fn mine_candidate(&self, c: &MergeCandidate) -> Result<PullRequestRecord> {
        let mut flags = Vec::new();
        let raw = self.git.diff(&c.parent_id, &c.commit_id)?;
        let full = String::from_utf8(raw).map_err(|_| Error::invalid("diff", "not valid UTF-8; skipped"))?;
        let (fix_patch, test_patch) = split_patch(&full, &self.classes.test)?;
        let fix = Patch::parse(&fix_patch)?;
        let test = Patch::parse(&test_patch)?;

        let expected = self.git.tree_of(c.commit_id.as_str())?;
        let replayed = self.git.apply_to_tree(&c.parent_id, &[&fix_patch, &test_patch])?;
        if expected != replayed {
            return Err(Error::invalid("patch round-trip", format!("tree {replayed} != {expected}")));
        }

        let message = self.git.message(&c.commit_id)?;
        let pr_number = parse_pr_number(&message);
        let full_patch = Patch::parse(&full)?;
        let (all_texts, text_flags) = harvest_texts(
            &c.commit_id,
            pr_number,
            &message,
            &full_patch,
            &self.classes,
            self.metadata.as_deref(),
        );
        flags.extend(text_flags);

        let (changes, warnings) = extract_symbol_changes(&self.git, &c.parent_id, &c.commit_id, &fix, &self.extractors)?;
        for w in warnings {
            tracing::debug!(commit = %c.commit_id, "{w}");
        }

        let test_files: BTreeSet<String> = test.file_set();
        let fix_files: Vec<String> = fix.file_set().into_iter().collect();
        let head_files = self.git.ls_files(c.commit_id.as_str())?;
        let siblings = sibling_test_files(&fix_files, &head_files, &self.classes);
        let scope: Vec<String> = test_files.iter().chain(siblings.iter()).cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let discover = |rev: &CommitId| self.discovery.discover(&self.git, rev.as_str(), &scope);
        let (parent_ids, head_ids) = match (discover(&c.parent_id), discover(&c.commit_id)) {
            (Ok(p), Ok(h)) => (p, h),
            (Err(Error::DiscoveryFailed { reason, .. }), _) | (_, Err(Error::DiscoveryFailed { reason, .. })) => {
                tracing::warn!(commit = %c.commit_id, %reason, "falling back to static discovery");
                flags.push(format!("discovery-fallback: {reason}"));
                (
                    StaticDiscovery.discover(&self.git, c.parent_id.as_str(), &scope)?,
                    StaticDiscovery.discover(&self.git, c.commit_id.as_str(), &scope)?,
                )
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let (fail_to_pass, pass_to_pass) = derive_candidate_tests(&parent_ids, &head_ids, &test_files, &siblings);

        let text_for_classifier: Vec<String> = all_texts.iter().map(|b| b.text.clone()).collect();
        let outcome = classify_pr(&c.commit_id, &text_for_classifier, self.classifier.as_deref());
        flags.extend(outcome.flags);

        let record = PullRequestRecord {
            commit_id: c.commit_id.clone(),
            parent_id: c.parent_id.clone(),
            pr_number,
            merged_at: c.merged_at,
            all_texts,
            changed_files: full_patch.file_set().into_iter().collect(),
            test_files: test_files.into_iter().collect(),
            changes,
            fix_patch,
            test_patch,
            fail_to_pass,
            pass_to_pass,
            category: outcome.classification.category,
            category_confidence: outcome.classification.confidence,
            flags,
        };
        record.check_invariants(&self.classes)?;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn pr_numbers_come_from_the_subject() {
        assert_eq!(parse_pr_number("Add subtract (#101)\n\nbody (#7)"), 101);
        assert_eq!(parse_pr_number("Merge (#1) and (#2)"), 2);
        assert_eq!(parse_pr_number("no number\n(#5)"), 0);
        assert_eq!(parse_pr_number("issue #9"), 0);
    }

    #[test]
    fn window_is_ordered_and_inclusive() {
        let a = chrono::Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let b = chrono::Utc.with_ymd_and_hms(2024, 2, 1, 0, 0, 0).unwrap();
        assert!(EvaluationWindow::new(b, a).is_err());
        assert!(EvaluationWindow::new(a, a).is_err());
        let w = EvaluationWindow::new(a, b).unwrap();
        assert!(w.contains(a) && w.contains(b));
    }
}
