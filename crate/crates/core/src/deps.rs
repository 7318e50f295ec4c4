//! Causal links between mined PRs: symbol references and blame ancestry.
//! Edges are analytical only and never filter chains.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::Patch;
use crate::error::Result;
use crate::git::Git;
use crate::miner::symbols::SymbolKind;
use crate::miner::PullRequestRecord;
use crate::types::CommitId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Symbol,
    Blame,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Evidence {
    Symbol { name: String },
    /// Line number as of the later PR's parent commit.
    Line { file: String, line: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependencyEdge {
    pub from_pr: CommitId,
    pub to_pr: CommitId,
    pub kind: EdgeKind,
    pub evidence: Evidence,
}

fn identifiers(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty() && !t.starts_with(|c: char| c.is_ascii_digit()))
}

/// Identifier tokens on the added lines of a record's fix patch.
fn added_tokens(record: &PullRequestRecord) -> BTreeSet<String> {
    let Ok(patch) = Patch::parse(&record.fix_patch) else {
        return BTreeSet::new();
    };
    patch
        .files
        .iter()
        .flat_map(|f| f.added_lines())
        .flat_map(|(_, text)| identifiers(text).map(str::to_string).collect::<Vec<_>>())
        .collect()
}

/// Edge i→j when a class or function changed by PR i is named (terminal
/// segment, whole token) on an added line of PR j's fix patch.
pub fn symbol_dependencies(records: &[PullRequestRecord]) -> Vec<DependencyEdge> {
    let tokens: Vec<BTreeSet<String>> = records.par_iter().map(added_tokens).collect();
    let mut edges = BTreeSet::new();
    for (i, earlier) in records.iter().enumerate() {
        let names: BTreeSet<&str> = earlier
            .changes
            .iter()
            .filter(|c| matches!(c.symbol_kind, SymbolKind::Class | SymbolKind::Function))
            .map(|c| c.terminal_name())
            .filter(|n| !n.is_empty())
            .collect();
        for (j, later) in records.iter().enumerate().skip(i + 1) {
            if later.merged_at <= earlier.merged_at {
                continue;
            }
            for name in names.iter().filter(|n| tokens[j].contains(**n)) {
                edges.insert(DependencyEdge {
                    from_pr: earlier.commit_id.clone(),
                    to_pr: later.commit_id.clone(),
                    kind: EdgeKind::Symbol,
                    evidence: Evidence::Symbol { name: name.to_string() },
                });
            }
        }
    }
    edges.into_iter().collect()
}

/// Edge i→j when a context or deleted line of PR j's fix patch is blamed,
/// at PR j's parent, to PR i. Returns edges plus per-file warnings.
pub fn blame_ancestry(records: &[PullRequestRecord], git: &Git) -> Result<(Vec<DependencyEdge>, Vec<String>)> {
    let index: HashMap<&CommitId, usize> = records.iter().enumerate().map(|(i, r)| (&r.commit_id, i)).collect();
    let per_record: Vec<(Vec<DependencyEdge>, Vec<String>)> = records
        .par_iter()
        .enumerate()
        .map(|(j, later)| {
            let mut edges = Vec::new();
            let mut warnings = Vec::new();
            let patch = match Patch::parse(&later.fix_patch) {
                Ok(p) => p,
                Err(e) => return (edges, vec![format!("{}: {e}", later.commit_id.short())]),
            };
            for file in &patch.files {
                let Some(old_path) = file.old_path.as_deref() else { continue };
                if file.binary {
                    warnings.push(format!("{}: {old_path} is binary; blame skipped", later.commit_id.short()));
                    continue;
                }
                let lines: BTreeSet<u32> = file.hunks.iter().flat_map(|h| h.old_side().map(|(n, _)| n)).collect();
                let lines: Vec<u32> = lines.into_iter().collect();
                let blamed = match git.blame_lines(&later.parent_id, old_path, &lines) {
                    Ok(b) => b,
                    Err(e) => {
                        warnings.push(format!("{}: {e}", later.commit_id.short()));
                        continue;
                    }
                };
                for (line, commit) in blamed {
                    let Some(&i) = index.get(&commit) else { continue };
                    if i < j && records[i].merged_at < later.merged_at {
                        edges.push(DependencyEdge {
                            from_pr: commit,
                            to_pr: later.commit_id.clone(),
                            kind: EdgeKind::Blame,
                            evidence: Evidence::Line { file: old_path.to_string(), line },
                        });
                    }
                }
            }
            (edges, warnings)
        })
        .collect();
    let mut edges = BTreeSet::new();
    let mut warnings = Vec::new();
    for (e, w) in per_record {
        edges.extend(e);
        warnings.extend(w);
    }
    Ok((edges.into_iter().collect(), warnings))
}

/// Both kinds, in canonical order.
pub fn all_dependencies(records: &[PullRequestRecord], git: &Git) -> Result<(Vec<DependencyEdge>, Vec<String>)> {
    let (blame, warnings) = blame_ancestry(records, git)?;
    let mut edges: BTreeSet<DependencyEdge> = symbol_dependencies(records).into_iter().collect();
    edges.extend(blame);
    Ok((edges.into_iter().collect(), warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interdependence {
    pub chains: usize,
    pub interdependent: usize,
    pub ratio: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Fraction of chains with at least one edge between two of their own PRs.
pub fn interdependence_ratio(chains: &[Vec<CommitId>], edges: &[DependencyEdge]) -> Interdependence {
    if chains.is_empty() {
        return Interdependence { chains: 0, interdependent: 0, ratio: 0.0, flags: vec!["empty-input".into()] };
    }
    let interdependent = chains
        .iter()
        .filter(|members| {
            let set: BTreeSet<&CommitId> = members.iter().collect();
            edges.iter().any(|e| set.contains(&e.from_pr) && set.contains(&e.to_pr))
        })
        .count();
    Interdependence { chains: chains.len(), interdependent, ratio: interdependent as f64 / chains.len() as f64, flags: vec![] }
}
