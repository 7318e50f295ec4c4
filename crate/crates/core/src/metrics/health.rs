//! Repository-health snapshots and their evolution along a chain.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::complexity::analyze_source;
use crate::error::{Error, Result};
use crate::forge::TaskChain;
use crate::git::Git;
use crate::pathrules::PathClasses;
use crate::sandbox::host::run_with_timeout;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHealth {
    #[serde(alias = "file")]
    pub path: String,
    #[serde(alias = "cognitive_complexity")]
    pub complexity: u64,
    pub sqale_minutes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotAt {
    pub run_id: String,
    pub pr: usize,
    pub cycle: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthSnapshot {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<SnapshotAt>,
    pub analyzer: String,
    /// Totals are `None` when the analyzer failed.
    pub cognitive_complexity_total: Option<u64>,
    pub sqale_index_minutes: Option<u64>,
    #[serde(default)]
    pub per_file: Vec<FileHealth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl HealthSnapshot {
    pub fn from_files(analyzer: &str, mut per_file: Vec<FileHealth>, at: Option<SnapshotAt>) -> Self {
        per_file.sort_by(|a, b| a.path.cmp(&b.path));
        Self {
            at,
            analyzer: analyzer.to_string(),
            cognitive_complexity_total: Some(per_file.iter().map(|f| f.complexity).sum()),
            sqale_index_minutes: Some(per_file.iter().map(|f| f.sqale_minutes).sum()),
            per_file,
            error: None,
        }
    }

    pub fn unavailable(analyzer: &str, error: String, at: Option<SnapshotAt>) -> Self {
        Self { at, analyzer: analyzer.to_string(), cognitive_complexity_total: None, sqale_index_minutes: None, per_file: vec![], error: Some(error) }
    }

    pub fn available(&self) -> bool {
        self.cognitive_complexity_total.is_some() && self.sqale_index_minutes.is_some()
    }
}

pub trait Analyzer: Send + Sync {
    fn name(&self) -> &'static str;
    /// Scores `files` (relative to `root`).
    fn analyze(&self, root: &Path, files: &[String]) -> Result<Vec<FileHealth>>;
}

/// Built-in analyzer for `.py` files.
#[derive(Debug, Default)]
pub struct BaselineAnalyzer;

impl Analyzer for BaselineAnalyzer {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn analyze(&self, root: &Path, files: &[String]) -> Result<Vec<FileHealth>> {
        let mut out = Vec::new();
        for f in files.iter().filter(|f| f.ends_with(".py")) {
            let p = root.join(f);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let Ok(src) = String::from_utf8(bytes) else { continue };
            let a = analyze_source(&src);
            out.push(FileHealth { path: f.clone(), complexity: a.complexity, sqale_minutes: a.sqale_minutes() });
        }
        Ok(out)
    }
}

/// Runs `argv <root>` and reads `[{file, cognitive_complexity, sqale_minutes}]` from stdout.
#[derive(Debug, Clone)]
pub struct ExternalAnalyzer {
    pub argv: Vec<String>,
    pub timeout: Duration,
}

impl Analyzer for ExternalAnalyzer {
    fn name(&self) -> &'static str {
        "external"
    }

    fn analyze(&self, root: &Path, files: &[String]) -> Result<Vec<FileHealth>> {
        let (program, args) = self.argv.split_first().ok_or_else(|| Error::AnalyzerFailed("empty analyzer command".into()))?;
        let mut cmd = Command::new(program);
        cmd.args(args).arg(root);
        let out = run_with_timeout(cmd, None, Some(self.timeout)).map_err(|e| Error::AnalyzerFailed(e.to_string()))?;
        if !out.success() {
            return Err(Error::AnalyzerFailed(format!("exit {:?}: {}", out.exit_code, out.stderr_text())));
        }
        let mut de = serde_json::Deserializer::from_slice(&out.stdout);
        let report: Vec<FileHealth> =
            serde_path_to_error::deserialize(&mut de).map_err(|e| Error::AnalyzerFailed(format!("report at {}: {}", e.path(), e.inner())))?;
        let wanted: std::collections::BTreeSet<&String> = files.iter().collect();
        Ok(report.into_iter().filter(|f| wanted.contains(&f.path)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzerConfig {
    #[serde(default = "default_provider")]
    pub provider: String,
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
}

fn default_provider() -> String {
    "baseline".into()
}
fn default_timeout() -> u64 {
    600
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self { provider: default_provider(), command: vec![], timeout_s: default_timeout() }
    }
}

type AnalyzerFactory = fn(&AnalyzerConfig) -> Result<Arc<dyn Analyzer>>;

/// Analyzer providers by name.
#[derive(Clone)]
pub struct AnalyzerRegistry {
    factories: BTreeMap<String, AnalyzerFactory>,
}

impl Default for AnalyzerRegistry {
    fn default() -> Self {
        let mut r = Self { factories: BTreeMap::new() };
        r.register("baseline", |_| Ok(Arc::new(BaselineAnalyzer)));
        r.register("external", |cfg| {
            if cfg.command.is_empty() {
                return Err(Error::Config("external analyzer needs a command".into()));
            }
            Ok(Arc::new(ExternalAnalyzer { argv: cfg.command.clone(), timeout: Duration::from_secs(cfg.timeout_s) }))
        });
        r
    }
}

impl AnalyzerRegistry {
    pub fn register(&mut self, name: &str, factory: AnalyzerFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn build(&self, cfg: &AnalyzerConfig) -> Result<Arc<dyn Analyzer>> {
        let f = self.factories.get(&cfg.provider).ok_or_else(|| Error::UnknownStrategy {
            kind: "analyzer",
            name: cfg.provider.clone(),
            available: self.factories.keys().cloned().collect::<Vec<_>>().join(", "),
        })?;
        f(cfg)
    }
}

fn walk(root: &Path, rel: &Path, out: &mut Vec<String>) -> Result<()> {
    let dir = root.join(rel);
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let name = entry.file_name();
        if name == ".git" {
            continue;
        }
        let child = rel.join(&name);
        let ft = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
        if ft.is_dir() {
            walk(root, &child, out)?;
        } else if ft.is_file() {
            out.push(child.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Non-test files under `root`, sorted.
pub fn analyzable_files(root: &Path, classes: &PathClasses) -> Result<Vec<String>> {
    let mut files = Vec::new();
    walk(root, Path::new(""), &mut files)?;
    files.retain(|f| !classes.is_test(f));
    files.sort();
    Ok(files)
}

/// Snapshot of a directory; analyzer failures give an unavailable snapshot.
pub fn health_snapshot(root: &Path, classes: &PathClasses, analyzer: &dyn Analyzer, at: Option<SnapshotAt>) -> HealthSnapshot {
    let result = analyzable_files(root, classes).and_then(|files| analyzer.analyze(root, &files));
    match result {
        Ok(per_file) => HealthSnapshot::from_files(analyzer.name(), per_file, at),
        Err(e) => HealthSnapshot::unavailable(analyzer.name(), e.to_string(), at),
    }
}

/// Snapshot of a commit or tree in a host repository.
pub fn snapshot_rev(git: &Git, rev: &str, classes: &PathClasses, analyzer: &dyn Analyzer) -> Result<HealthSnapshot> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let root: PathBuf = dir.path().join("tree");
    git.export_tree(rev, &root)?;
    Ok(health_snapshot(&root, classes, analyzer, None))
}

/// Base snapshot and one snapshot after each gold step (fix and test patches
/// 1..=k applied to the base).
pub fn gold_trace(
    git: &Git,
    chain: &TaskChain,
    classes: &PathClasses,
    analyzer: &dyn Analyzer,
) -> Result<(HealthSnapshot, Vec<HealthSnapshot>)> {
    let base = snapshot_rev(git, chain.base_commit.as_str(), classes, analyzer)?;
    let mut trace = Vec::new();
    let mut patches: Vec<&str> = Vec::new();
    for g in &chain.gold {
        patches.push(&g.fix_patch);
        patches.push(&g.test_patch);
        let tree = git.apply_to_tree(&chain.base_commit, &patches)?;
        trace.push(snapshot_rev(git, &tree, classes, analyzer)?);
    }
    Ok((base, trace))
}

/// Bin of 1-based PR index `k` in a chain of `n`.
pub fn bin_of(k: usize, n: usize, bins: usize) -> usize {
    assert!(k >= 1 && k <= n && bins >= 1, "bin_of needs 1 <= k <= n and bins >= 1");
    bins.min(1 + bins * (k - 1) / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trace {
    Agent,
    Gold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Base,
    Gold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthDelta {
    pub trace: Trace,
    pub vs: Basis,
    pub bin: usize,
    pub d_complexity: i64,
    pub d_sqale_minutes: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evolution {
    pub binned: bool,
    pub deltas: Vec<HealthDelta>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

fn totals(s: &HealthSnapshot) -> Option<(i64, i64)> {
    Some((s.cognitive_complexity_total? as i64, s.sqale_index_minutes? as i64))
}

/// Last available snapshot per bin.
fn last_per_bin(snaps: &[(usize, HealthSnapshot)], n: usize, bins: usize, binned: bool) -> BTreeMap<usize, &HealthSnapshot> {
    let mut sorted: Vec<&(usize, HealthSnapshot)> = snaps.iter().filter(|(k, s)| *k >= 1 && *k <= n && s.available()).collect();
    sorted.sort_by_key(|(k, _)| *k);
    let mut out = BTreeMap::new();
    for (k, s) in sorted {
        out.insert(if binned { bin_of(*k, n, bins) } else { *k }, s);
    }
    out
}

/// Deltas per bin: agent and gold against the base, and agent against gold.
/// Chains of at most `bins` PRs are reported per PR and flagged.
pub fn health_evolution(
    agent: &[(usize, HealthSnapshot)],
    gold: &[(usize, HealthSnapshot)],
    base: &HealthSnapshot,
    n: usize,
    bins: usize,
) -> Evolution {
    let binned = n > bins;
    let mut ev = Evolution { binned, ..Default::default() };
    if !binned {
        ev.flags.push(format!("unbinned: n = {n} is not above {bins}"));
    }
    let Some((bc, bs)) = totals(base) else {
        ev.flags.push("base snapshot unavailable".into());
        return ev;
    };
    let a = last_per_bin(agent, n, bins, binned);
    let g = last_per_bin(gold, n, bins, binned);
    let delta = |trace, vs, bin, s: &HealthSnapshot, (rc, rs): (i64, i64)| {
        totals(s).map(|(c, q)| HealthDelta { trace, vs, bin, d_complexity: c - rc, d_sqale_minutes: q - rs })
    };
    for (&bin, s) in &a {
        ev.deltas.extend(delta(Trace::Agent, Basis::Base, bin, s, (bc, bs)));
    }
    for (&bin, s) in &g {
        ev.deltas.extend(delta(Trace::Gold, Basis::Base, bin, s, (bc, bs)));
    }
    for (&bin, s) in &a {
        if let Some(gs) = g.get(&bin).and_then(|gs| totals(gs)) {
            ev.deltas.extend(delta(Trace::Agent, Basis::Gold, bin, s, gs));
        }
    }
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(c: u64, q: u64) -> HealthSnapshot {
        HealthSnapshot::from_files("baseline", vec![FileHealth { path: "a.py".into(), complexity: c, sqale_minutes: q }], None)
    }

    #[test]
    fn bins_follow_the_formula() {
        assert_eq!((1..=5).map(|k| bin_of(k, 5, 5)).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        assert_eq!((1..=7).map(|k| bin_of(k, 7, 5)).collect::<Vec<_>>(), vec![1, 1, 2, 3, 3, 4, 5]);
        let ten: Vec<usize> = (1..=10).map(|k| bin_of(k, 10, 5)).collect();
        assert!((1..=5).all(|b| ten.iter().filter(|x| **x == b).count() == 2));
    }

    #[test]
    fn evolution_uses_last_snapshot_in_bin() {
        let agent: Vec<(usize, HealthSnapshot)> = (1..=7).map(|k| (k, snap(10 + k as u64, 5))).collect();
        let gold: Vec<(usize, HealthSnapshot)> = (1..=7).map(|k| (k, snap(10, 5 + k as u64))).collect();
        let ev = health_evolution(&agent, &gold, &snap(10, 5), 7, 5);
        assert!(ev.binned);
        let a1 = ev.deltas.iter().find(|d| d.trace == Trace::Agent && d.vs == Basis::Base && d.bin == 1).unwrap();
        assert_eq!(a1.d_complexity, 2);
        let ag5 = ev.deltas.iter().find(|d| d.trace == Trace::Agent && d.vs == Basis::Gold && d.bin == 5).unwrap();
        assert_eq!((ag5.d_complexity, ag5.d_sqale_minutes), (7, -7));
    }

    #[test]
    fn unavailable_is_never_zero() {
        let s = HealthSnapshot::unavailable("external", "boom".into(), None);
        assert!(!s.available());
        let ev = health_evolution(&[(1, snap(1, 1))], &[], &s, 3, 5);
        assert!(ev.deltas.is_empty());
        assert!(!ev.binned);
    }

    #[test]
    fn external_report_is_schema_checked() {
        let dir = tempfile::tempdir().unwrap();
        let ok = ExternalAnalyzer {
            argv: vec!["sh".into(), "-c".into(), r#"echo '[{"file":"a.py","cognitive_complexity":3,"sqale_minutes":4}]'"#.into()],
            timeout: Duration::from_secs(10),
        };
        let r = ok.analyze(dir.path(), &["a.py".into()]).unwrap();
        assert_eq!(r, vec![FileHealth { path: "a.py".into(), complexity: 3, sqale_minutes: 4 }]);
        let bad = ExternalAnalyzer {
            argv: vec!["sh".into(), "-c".into(), r#"echo '[{"file":"a.py","cognitive_complexity":"x"}]'"#.into()],
            timeout: Duration::from_secs(10),
        };
        let e = bad.analyze(dir.path(), &["a.py".into()]).unwrap_err();
        assert!(e.to_string().contains("cognitive_complexity"), "{e}");
    }
}
