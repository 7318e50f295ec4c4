//! Test discovery on repository snapshots and F2P/P2P candidate derivation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::git::Git;
use crate::lang::python::{block_end, logical_lines};
use crate::pathrules::PathClasses;
use crate::sandbox::host::run_with_timeout;
use crate::sandbox::PLUGIN_SOURCE;
use crate::types::TestId;

/// Lists the test ids in `files` as of snapshot `rev` (a commit or tree id).
pub trait TestDiscovery: Send + Sync {
    fn name(&self) -> &'static str;
    fn discover(&self, git: &Git, rev: &str, files: &[String]) -> Result<BTreeSet<TestId>>;
}

/// Reads test declarations from source without executing anything:
/// module-level `def test_*` and `test_*` methods of `Test*` classes.
#[derive(Debug, Default, Clone, Copy)]
pub struct StaticDiscovery;

impl StaticDiscovery {
    pub fn scan(path: &str, source: &str) -> Vec<TestId> {
        let lines = logical_lines(source);
        let mut out = Vec::new();
        let mut i = 0;
        while i < lines.len() {
            let line = &lines[i];
            if line.indent != 0 {
                i += 1;
                continue;
            }
            let code = line.code.trim_start_matches("async ");
            if let Some(name) = decl_name(code, "def ") {
                if name.starts_with("test") {
                    out.push(TestId::new(format!("{path}::{name}")));
                }
            } else if let Some(name) = decl_name(code, "class ") {
                let end = block_end(&lines, i);
                if name.starts_with("Test") {
                    let body_indent = lines.get(i + 1).map(|l| l.indent).unwrap_or(0);
                    for member in &lines[i + 1..end] {
                        if member.indent != body_indent {
                            continue;
                        }
                        let code = member.code.trim_start_matches("async ");
                        if let Some(m) = decl_name(code, "def ").filter(|m| m.starts_with("test")) {
                            out.push(TestId::new(format!("{path}::{name}::{m}")));
                        }
                    }
                }
                i = end;
                continue;
            }
            i += 1;
        }
        out
    }
}

fn decl_name<'a>(code: &'a str, keyword: &str) -> Option<&'a str> {
    let rest = code.strip_prefix(keyword)?;
    let end = rest.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(rest.len());
    (end > 0).then(|| &rest[..end])
}

impl TestDiscovery for StaticDiscovery {
    fn name(&self) -> &'static str {
        "static"
    }

    fn discover(&self, git: &Git, rev: &str, files: &[String]) -> Result<BTreeSet<TestId>> {
        let mut ids = BTreeSet::new();
        for file in files.iter().filter(|f| f.ends_with(".py")) {
            if let Some(bytes) = git.show_file(rev, file)? {
                ids.extend(Self::scan(file, &String::from_utf8_lossy(&bytes)));
            }
        }
        Ok(ids)
    }
}

/// Runs pytest collection on an exported snapshot.
#[derive(Debug, Clone)]
pub struct PytestDiscovery {
    pub env_path: String,
    pub timeout: Duration,
}

impl Default for PytestDiscovery {
    fn default() -> Self {
        Self { env_path: "python3".into(), timeout: Duration::from_secs(300) }
    }
}

#[derive(Deserialize)]
struct Collected {
    items: Vec<String>,
    errors: Vec<CollectError>,
}

#[derive(Deserialize)]
struct CollectError {
    path: String,
    longrepr: String,
}

impl TestDiscovery for PytestDiscovery {
    fn name(&self) -> &'static str {
        "pytest"
    }

    fn discover(&self, git: &Git, rev: &str, files: &[String]) -> Result<BTreeSet<TestId>> {
        let failed = |reason: String| Error::DiscoveryFailed { commit: rev.to_string(), reason };
        let scratch = tempfile::Builder::new().prefix("cf-collect-").tempdir().map_err(|e| failed(e.to_string()))?;
        let tree = scratch.path().join("tree");
        let harness = scratch.path().join("harness");
        std::fs::create_dir_all(&tree).map_err(|e| failed(e.to_string()))?;
        std::fs::create_dir_all(&harness).map_err(|e| failed(e.to_string()))?;
        std::fs::write(harness.join("chainforge_pytest.py"), PLUGIN_SOURCE).map_err(|e| failed(e.to_string()))?;
        export_tree(git, rev, &tree).map_err(|e| failed(e.to_string()))?;

        let present: Vec<&String> = files.iter().filter(|f| tree.join(f).is_file()).collect();
        if present.is_empty() {
            return Ok(BTreeSet::new());
        }
        let out_file = scratch.path().join("collected.json");
        let mut cmd = std::process::Command::new(&self.env_path);
        cmd.args(["-m", "pytest", "--collect-only", "-q", "-p", "chainforge_pytest", "-p", "no:cacheprovider", "--rootdir=."])
            .arg("--cf-collect")
            .arg(&out_file)
            .args(present.iter().map(|s| s.as_str()))
            .current_dir(&tree)
            .env("PYTHONPATH", &harness)
            .env("PYTHONDONTWRITEBYTECODE", "1");
        let out = run_with_timeout(cmd, None, Some(self.timeout))?;
        if out.timed_out {
            return Err(failed("collection timed out".into()));
        }
        let text = std::fs::read_to_string(&out_file)
            .map_err(|_| failed(format!("collector exited with {:?}: {}", out.exit_code, out.stderr_text())))?;
        let collected: Collected = serde_json::from_str(&text).map_err(|e| failed(e.to_string()))?;
        if let Some(err) = collected.errors.first() {
            return Err(failed(format!("{}: {}", err.path, err.longrepr.lines().last().unwrap_or_default())));
        }
        Ok(collected.items.into_iter().map(TestId::new).collect())
    }
}

/// Writes the files of `rev` into `dest`.
pub fn export_tree(git: &Git, rev: &str, dest: &Path) -> Result<()> {
    let tar = git.run_bytes(&["archive", "--format=tar", rev], None, &[])?;
    let mut cmd = std::process::Command::new("tar");
    cmd.arg("-xf").arg("-").arg("-C").arg(dest);
    let out = run_with_timeout(cmd, Some(&tar), None)?;
    if !out.success() {
        return Err(Error::Command { command: "tar -x".into(), stderr: out.stderr_text() });
    }
    Ok(())
}

#[derive(Clone)]
pub struct DiscoveryRegistry {
    entries: BTreeMap<&'static str, Arc<dyn TestDiscovery>>,
}

impl DiscoveryRegistry {
    pub fn with_defaults(env_path: &str) -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register(Arc::new(StaticDiscovery));
        r.register(Arc::new(PytestDiscovery { env_path: env_path.to_string(), ..Default::default() }));
        r
    }

    pub fn register(&mut self, d: Arc<dyn TestDiscovery>) {
        self.entries.insert(d.name(), d);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn TestDiscovery>> {
        self.entries.get(name).cloned().ok_or_else(|| Error::UnknownStrategy {
            kind: "test discovery",
            name: name.to_string(),
            available: self.entries.keys().copied().collect::<Vec<_>>().join(", "),
        })
    }
}

/// Test files next to a modified module: `test_<stem>.py` / `<stem>_test.py`.
pub fn sibling_test_files(fix_files: &[String], head_files: &[String], classes: &PathClasses) -> BTreeSet<String> {
    let stems: BTreeSet<&str> = fix_files
        .iter()
        .filter(|f| f.ends_with(".py") && !classes.is_test(f))
        .filter_map(|f| Path::new(f).file_stem().and_then(|s| s.to_str()))
        .filter(|s| *s != "__init__")
        .collect();
    head_files
        .iter()
        .filter(|f| classes.is_test(f))
        .filter(|f| {
            let base = f.rsplit('/').next().unwrap_or(f);
            stems.iter().any(|s| base == format!("test_{s}.py") || base == format!("{s}_test.py"))
        })
        .cloned()
        .collect()
}

/// F2P = new at head, inside test-patch files; P2P = present on both
/// snapshots, inside test-patch files or sibling test files.
pub fn derive_candidate_tests(
    parent: &BTreeSet<TestId>,
    head: &BTreeSet<TestId>,
    test_patch_files: &BTreeSet<String>,
    sibling_files: &BTreeSet<String>,
) -> (Vec<TestId>, Vec<TestId>) {
    let f2p: Vec<TestId> = head
        .iter()
        .filter(|t| !parent.contains(*t) && test_patch_files.contains(t.file()))
        .cloned()
        .collect();
    let p2p: Vec<TestId> = head
        .iter()
        .filter(|t| parent.contains(*t))
        .filter(|t| test_patch_files.contains(t.file()) || sibling_files.contains(t.file()))
        .cloned()
        .collect();
    (f2p, p2p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathrules::PathRuleConfig;

    fn set(v: &[&str]) -> BTreeSet<TestId> {
        v.iter().map(|s| TestId::from(*s)).collect()
    }

    fn files(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn static_scan_finds_functions_and_class_methods() {
        let src = "import x\n\ndef test_a():\n    def test_inner():\n        pass\n\nasync def test_b():\n    pass\n\ndef helper():\n    pass\n\nclass TestC:\n    def test_m(self):\n        pass\n    def other(self):\n        pass\n\nclass Helper:\n    def test_no(self):\n        pass\n";
        let ids: Vec<String> = StaticDiscovery::scan("tests/test_x.py", src).into_iter().map(|t| t.0).collect();
        assert_eq!(ids, vec!["tests/test_x.py::test_a", "tests/test_x.py::test_b", "tests/test_x.py::TestC::test_m"]);
    }

    #[test]
    fn candidates_follow_the_definitions() {
        let parent = set(&["tests/test_m.py::test_old", "tests/test_other.py::test_o"]);
        let head = set(&["tests/test_m.py::test_old", "tests/test_m.py::test_new", "tests/test_other.py::test_o"]);
        let (f2p, p2p) = derive_candidate_tests(&parent, &head, &files(&["tests/test_m.py"]), &BTreeSet::new());
        assert_eq!(f2p, vec![TestId::from("tests/test_m.py::test_new")]);
        assert_eq!(p2p, vec![TestId::from("tests/test_m.py::test_old")]);
        let (f2p, _) = derive_candidate_tests(&parent, &head, &BTreeSet::new(), &BTreeSet::new());
        assert!(f2p.is_empty());
        let (_, p2p) = derive_candidate_tests(&parent, &head, &BTreeSet::new(), &files(&["tests/test_other.py"]));
        assert_eq!(p2p, vec![TestId::from("tests/test_other.py::test_o")]);
    }

    #[test]
    fn sibling_files_match_module_stems() {
        let classes = PathClasses::compile(&PathRuleConfig::default()).unwrap();
        let head: Vec<String> = ["tests/test_core.py", "tests/test_stats.py", "tests/core_test.py", "src/core.py"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let got = sibling_test_files(&["calc/core.py".into()], &head, &classes);
        assert_eq!(got, files(&["tests/core_test.py", "tests/test_core.py"]));
    }
}
