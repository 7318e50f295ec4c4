//! Isolated workspaces for running tests and agents.
//!
//! A [`SandboxProvider`] supplies a handful of primitives (provision, exec,
//! agent command, destroy). Everything else (patching, freezing, revoking,
//! test runs, digests) is built once on top of `exec` in [`Sandbox`], so all
//! providers share the same semantics.

pub mod container;
pub mod host;
pub mod runner;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::diff::Patch;
use crate::error::{Error, Result};
use crate::git::conflict_from_stderr;
use crate::types::{CommitId, TestId};

pub use runner::{RunnerProfile, SuiteReport, TestOutcome};

pub const PLUGIN_SOURCE: &str = include_str!("chainforge_pytest.py");
const HARNESS_NAME: &str = "chainforge harness";
const HARNESS_EMAIL: &str = "harness@chainforge.invalid";
const HARNESS_DATE: &str = "2000-01-01T00:00:00Z";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkMode {
    /// Agents may reach the network (package installs); harness test runs are offline.
    #[default]
    InstallOnly,
    /// Nothing inside the sandbox reaches the network.
    Offline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxSpec {
    /// Container image, or `host-venv` for the subprocess provider.
    #[serde(default = "default_image")]
    pub image_ref: String,
    #[serde(default = "default_env_path")]
    pub env_path: String,
    #[serde(default)]
    pub network_mode: NetworkMode,
    #[serde(default)]
    pub cpu_limit: Option<f64>,
    #[serde(default)]
    pub mem_limit_mb: Option<u64>,
    #[serde(default = "default_run_timeout")]
    pub timeout_per_test_run: u64,
    /// Unprivileged uid the agent runs as; enables permission-enforced freezing.
    #[serde(default)]
    pub agent_uid: Option<u32>,
}

fn default_image() -> String {
    "host-venv".into()
}
fn default_env_path() -> String {
    "python3".into()
}
fn default_run_timeout() -> u64 {
    1200
}

impl Default for SandboxSpec {
    fn default() -> Self {
        Self {
            image_ref: default_image(),
            env_path: default_env_path(),
            network_mode: NetworkMode::default(),
            cpu_limit: None,
            mem_limit_mb: None,
            timeout_per_test_run: default_run_timeout(),
            agent_uid: None,
        }
    }
}

impl SandboxSpec {
    pub fn validate(&self) -> Result<()> {
        if self.timeout_per_test_run == 0 {
            return Err(Error::invalid("sandbox spec", "timeout_per_test_run must be > 0"));
        }
        if self.env_path.trim().is_empty() {
            return Err(Error::invalid("sandbox spec", "env_path must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxState {
    Provisioned,
    Frozen,
    Destroyed,
}

#[derive(Debug, Clone)]
pub struct SandboxHandle {
    pub id: String,
    /// Workspace path as seen inside the environment.
    pub workspace_root: PathBuf,
    /// Harness-only directory inside the environment (plugin, stash, scratch).
    pub private_root: PathBuf,
    /// Workspace path on the host, when the provider exposes one.
    pub host_workspace: Option<PathBuf>,
    pub state: SandboxState,
    /// Provider-specific bookkeeping (host temp root, container name).
    pub host_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct ExecRequest<'a> {
    pub argv: Vec<String>,
    /// Working directory inside the environment; defaults to the workspace.
    pub cwd: Option<PathBuf>,
    pub env: Vec<(String, String)>,
    pub stdin: Option<&'a [u8]>,
    pub timeout: Option<Duration>,
    pub offline: bool,
}

impl<'a> ExecRequest<'a> {
    pub fn new<S: AsRef<str>>(argv: &[S]) -> Self {
        Self { argv: argv.iter().map(|s| s.as_ref().to_string()).collect(), ..Default::default() }
    }

    pub fn stdin(mut self, data: &'a [u8]) -> Self {
        self.stdin = Some(data);
        self
    }

    pub fn with_cwd(mut self, cwd: impl Into<PathBuf>) -> Self {
        self.cwd = Some(cwd.into());
        self
    }

    pub fn env(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.env.push((k.into(), v.into()));
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExecOutput {
    /// `None` when killed by a signal or timeout.
    pub exit_code: Option<i32>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub timed_out: bool,
}

impl ExecOutput {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0)
    }

    pub fn stderr_text(&self) -> String {
        String::from_utf8_lossy(&self.stderr).trim().to_string()
    }
}

pub trait SandboxProvider: Send + Sync {
    fn name(&self) -> &'static str;
    /// Materializes `base` from `repo` with history truncated at `base`.
    fn provision(&self, spec: &SandboxSpec, repo: &Path, base: &CommitId) -> Result<SandboxHandle>;
    fn exec(&self, handle: &SandboxHandle, spec: &SandboxSpec, req: ExecRequest<'_>) -> Result<ExecOutput>;
    /// A command that starts an agent process inside the environment with
    /// agent privileges and the configured network policy.
    fn agent_command(&self, handle: &SandboxHandle, spec: &SandboxSpec, argv: &[String]) -> Result<Command>;
    fn destroy(&self, handle: &mut SandboxHandle) -> Result<()>;
    /// Whether writes by the agent to frozen files are refused by the OS.
    fn enforces_permissions(&self, spec: &SandboxSpec) -> bool;
    /// Whether `offline` requests are actually cut off from the network.
    fn enforces_network(&self, spec: &SandboxSpec) -> bool;
}

/// Providers by name.
#[derive(Clone, Default)]
pub struct ProviderRegistry {
    providers: BTreeMap<String, Arc<dyn SandboxProvider>>,
}

impl ProviderRegistry {
    pub fn with_defaults() -> Self {
        let mut r = Self::default();
        r.register(Arc::new(host::HostProvider::default()));
        r
    }

    pub fn register(&mut self, provider: Arc<dyn SandboxProvider>) {
        self.providers.insert(provider.name().to_string(), provider);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn SandboxProvider>> {
        self.providers.get(name).cloned().ok_or_else(|| Error::UnknownStrategy {
            kind: "sandbox provider",
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.providers.keys().cloned().collect()
    }
}

/// Guard state recorded on a sandbox and copied into run records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardStatus {
    /// Frozen files are write-protected by the OS, not just digested.
    pub permissions_enforced: bool,
    pub network_enforced: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

struct Revoked {
    path: String,
    stash: PathBuf,
    digest: String,
}

/// A live sandbox: handle plus the provider that owns it.
pub struct Sandbox {
    provider: Arc<dyn SandboxProvider>,
    spec: SandboxSpec,
    handle: SandboxHandle,
    frozen: BTreeMap<String, String>,
    revoked: Vec<Revoked>,
    runs: usize,
    pub guard: GuardStatus,
}

impl Sandbox {
    pub fn provision(
        provider: Arc<dyn SandboxProvider>,
        spec: &SandboxSpec,
        repo: &Path,
        base: &CommitId,
    ) -> Result<Self> {
        spec.validate()?;
        let handle = provider.provision(spec, repo, base)?;
        let guard = GuardStatus {
            permissions_enforced: provider.enforces_permissions(spec),
            network_enforced: provider.enforces_network(spec),
            notes: vec![],
        };
        let mut sb = Self { provider, spec: spec.clone(), handle, frozen: BTreeMap::new(), revoked: vec![], runs: 0, guard };
        if !sb.guard.permissions_enforced {
            sb.guard.notes.push("unguarded: frozen files are digest-checked only".into());
        }
        if !sb.guard.network_enforced {
            sb.guard.notes.push("network isolation unavailable".into());
        }
        let harness = sb.harness_dir();
        sb.write_file(&harness.join("chainforge_pytest.py"), PLUGIN_SOURCE.as_bytes())?;
        Ok(sb)
    }

    pub fn handle(&self) -> &SandboxHandle {
        &self.handle
    }

    pub fn spec(&self) -> &SandboxSpec {
        &self.spec
    }

    pub fn provider_name(&self) -> &'static str {
        self.provider.name()
    }

    pub fn workspace(&self) -> &Path {
        &self.handle.workspace_root
    }

    pub fn harness_dir(&self) -> PathBuf {
        self.handle.private_root.join("harness")
    }

    fn live(&self) -> Result<()> {
        if self.handle.state == SandboxState::Destroyed {
            return Err(Error::SandboxState { id: self.handle.id.clone(), state: "destroyed".into() });
        }
        Ok(())
    }

    pub fn exec(&self, req: ExecRequest<'_>) -> Result<ExecOutput> {
        self.live()?;
        self.provider.exec(&self.handle, &self.spec, req)
    }

    fn exec_ok(&self, req: ExecRequest<'_>) -> Result<ExecOutput> {
        let label = req.argv.join(" ");
        let out = self.exec(req)?;
        if out.success() {
            Ok(out)
        } else {
            Err(Error::Command { command: label, stderr: out.stderr_text() })
        }
    }

    /// Runs a POSIX shell script with positional `args`.
    pub fn sh(&self, script: &str, args: &[&str]) -> Result<ExecOutput> {
        let mut argv = vec!["sh".to_string(), "-c".into(), script.to_string(), "sh".into()];
        argv.extend(args.iter().map(|s| s.to_string()));
        self.exec_ok(ExecRequest { argv, ..Default::default() })
    }

    pub fn git(&self, args: &[&str], stdin: Option<&[u8]>) -> Result<ExecOutput> {
        let mut argv: Vec<String> = ["git", "-c", "safe.directory=*", "-c", "core.autocrlf=false"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        argv.extend(args.iter().map(|s| s.to_string()));
        let mut req = ExecRequest { argv, ..Default::default() }.env("LC_ALL", "C");
        req.stdin = stdin;
        self.exec_ok(req)
    }

    pub fn write_file(&self, path: &Path, data: &[u8]) -> Result<()> {
        let p = path.to_string_lossy();
        self.exec_ok(ExecRequest::new(&["sh", "-c", "mkdir -p \"$(dirname \"$1\")\" && cat > \"$1\"", "sh", &p]).stdin(data))?;
        Ok(())
    }

    pub fn read_file(&self, path: &Path) -> Result<Option<Vec<u8>>> {
        let p = path.to_string_lossy();
        let out = self.exec(ExecRequest::new(&["sh", "-c", "test -f \"$1\" || exit 3; cat \"$1\"", "sh", &p]))?;
        match out.exit_code {
            Some(0) => Ok(Some(out.stdout)),
            Some(3) => Ok(None),
            _ => Err(Error::Command { command: format!("read {p}"), stderr: out.stderr_text() }),
        }
    }

    /// Applies a unified diff inside the workspace and returns the touched paths.
    pub fn apply_patch(&self, patch: &str) -> Result<Vec<String>> {
        self.live()?;
        if patch.trim().is_empty() {
            return Ok(vec![]);
        }
        let parsed = Patch::parse(patch)?;
        self.git(&["apply", "--whitespace=nowarn", "--binary", "-"], Some(patch.as_bytes()))
            .map_err(|e| match e {
                Error::Command { stderr, .. } => conflict_from_stderr(&stderr),
                other => other,
            })?;
        Ok(parsed.file_set().into_iter().collect())
    }

    /// Commits the whole workspace with a fixed identity and date so equal
    /// contents always produce equal commit ids.
    pub fn commit_all(&self, message: &str) -> Result<CommitId> {
        self.git(&["add", "-A"], None)?;
        let req = ExecRequest::new(&[
            "git",
            "-c",
            "safe.directory=*",
            "commit",
            "-q",
            "--allow-empty",
            "--no-verify",
            "-m",
            message,
        ])
        .env("GIT_AUTHOR_NAME", HARNESS_NAME)
        .env("GIT_AUTHOR_EMAIL", HARNESS_EMAIL)
        .env("GIT_AUTHOR_DATE", HARNESS_DATE)
        .env("GIT_COMMITTER_NAME", HARNESS_NAME)
        .env("GIT_COMMITTER_EMAIL", HARNESS_EMAIL)
        .env("GIT_COMMITTER_DATE", HARNESS_DATE);
        self.exec_ok(req)?;
        self.purge_reflog()?;
        self.head()
    }

    pub fn head(&self) -> Result<CommitId> {
        let out = self.git(&["rev-parse", "HEAD"], None)?;
        CommitId::parse(String::from_utf8_lossy(&out.stdout).trim())
    }

    pub fn purge_reflog(&self) -> Result<()> {
        self.git(&["reflog", "expire", "--expire=now", "--all"], None)?;
        self.sh("rm -rf .git/logs .git/FETCH_HEAD .git/ORIG_HEAD", &[])?;
        Ok(())
    }

    /// Tree id of the current workspace contents (tracked and untracked,
    /// ignoring `.gitignore`d paths), computed with a private index.
    pub fn tree_digest(&self) -> Result<String> {
        let index = self.handle.private_root.join("digest.index");
        let idx = index.to_string_lossy().to_string();
        let run = |args: &[&str]| -> Result<ExecOutput> {
            let mut argv: Vec<String> = vec!["git".into(), "-c".into(), "safe.directory=*".into()];
            argv.extend(args.iter().map(|s| s.to_string()));
            self.exec_ok(ExecRequest { argv, ..Default::default() }.env("GIT_INDEX_FILE", idx.clone()))
        };
        self.sh("rm -f \"$1\"", &[&idx])?;
        run(&["add", "-A", "."])?;
        let out = run(&["write-tree"])?;
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    }

    /// Binary diff from HEAD to the current workspace contents.
    pub fn workspace_patch(&self) -> Result<String> {
        let tree = self.tree_digest()?;
        let out = self.git(&["diff", "--binary", "--full-index", "--no-renames", "HEAD", &tree], None)?;
        String::from_utf8(out.stdout).map_err(|_| Error::invalid("workspace patch", "not UTF-8"))
    }

    /// Copies the current workspace contents (as in [`Sandbox::tree_digest`]) to a host directory.
    pub fn export_workspace(&self, dest: &Path) -> Result<()> {
        let tree = self.tree_digest()?;
        let out = self.git(&["archive", "--format=tar", &tree], None)?;
        crate::git::untar(&out.stdout, dest)
    }

    /// Lists workspace files (tracked and untracked, not ignored).
    pub fn list_files(&self) -> Result<Vec<String>> {
        let out = self.git(&["ls-files", "-z", "--cached", "--others", "--exclude-standard"], None)?;
        let mut files: Vec<String> = out
            .stdout
            .split(|b| *b == 0)
            .filter(|s| !s.is_empty())
            .map(|s| String::from_utf8_lossy(s).into_owned())
            .collect();
        files.sort();
        files.dedup();
        Ok(files)
    }

    /// sha256 per workspace-relative path; `None` for missing files.
    pub fn digests(&self, paths: &[String]) -> Result<BTreeMap<String, Option<String>>> {
        if paths.is_empty() {
            return Ok(BTreeMap::new());
        }
        let script = r#"for f; do if [ -f "$f" ]; then sha256sum -- "$f"; else printf 'MISSING  %s\n' "$f"; fi; done"#;
        let args: Vec<&str> = paths.iter().map(String::as_str).collect();
        let out = self.sh(script, &args)?;
        let text = String::from_utf8_lossy(&out.stdout);
        let mut result = BTreeMap::new();
        for (line, path) in text.lines().zip(paths) {
            let (digest, _) = line.split_once("  ").unwrap_or((line, ""));
            let digest = digest.trim_start_matches('\\');
            result.insert(path.clone(), (digest != "MISSING").then(|| digest.to_string()));
        }
        Ok(result)
    }

    /// Write-protects `files` against the agent and records their digests.
    ///
    /// Without OS enforcement the digests are still recorded and the guard
    /// status says so; tampering is then caught by [`Sandbox::tamper_check`].
    pub fn freeze_tests(&mut self, files: &[String]) -> Result<()> {
        self.live()?;
        let digests = self.digests(files)?;
        for (path, digest) in digests {
            if let Some(d) = digest {
                self.frozen.insert(path, d);
            }
        }
        self.handle.state = SandboxState::Frozen;
        Ok(())
    }

    pub fn frozen_files(&self) -> Vec<String> {
        self.frozen.keys().cloned().collect()
    }

    /// Applies ownership and modes for an agent turn: the workspace belongs
    /// to the agent uid, frozen files and their directories to root.
    pub fn prepare_agent_turn(&self) -> Result<()> {
        let Some(uid) = self.spec.agent_uid.filter(|_| self.guard.permissions_enforced) else {
            return Ok(());
        };
        let uid = uid.to_string();
        self.sh("chown -R \"$1:$1\" .", &[&uid])?;
        if self.frozen.is_empty() {
            return Ok(());
        }
        let mut dirs = BTreeSet::new();
        for f in self.frozen.keys() {
            let mut p = Path::new(f).parent();
            while let Some(d) = p {
                dirs.insert(if d.as_os_str().is_empty() { ".".to_string() } else { d.to_string_lossy().to_string() });
                p = d.parent();
            }
        }
        let files: Vec<&str> = self.frozen.keys().map(String::as_str).collect();
        self.sh("for f; do [ -f \"$f\" ] && chown 0:0 -- \"$f\" && chmod 0444 -- \"$f\"; done; true", &files)?;
        let dirs: Vec<&str> = dirs.iter().map(String::as_str).collect();
        self.sh("for d; do chown 0:0 -- \"$d\" && chmod 1777 -- \"$d\"; done", &dirs)?;
        Ok(())
    }

    /// Compares frozen digests with current contents; returns violated paths.
    pub fn tamper_check(&self) -> Result<Vec<String>> {
        let paths = self.frozen_files();
        let now = self.digests(&paths)?;
        Ok(paths
            .into_iter()
            .filter(|p| now.get(p).cloned().flatten().as_deref() != self.frozen.get(p).map(String::as_str))
            .collect())
    }

    /// Moves `files` out of the workspace into the harness stash.
    pub fn revoke_tests(&mut self, files: &[String]) -> Result<()> {
        self.live()?;
        let digests = self.digests(files)?;
        for (i, (path, digest)) in digests.into_iter().enumerate() {
            let Some(digest) = digest else { continue };
            let stash = self.handle.private_root.join("stash").join(format!("{}-{i}", self.revoked.len()));
            let stash_s = stash.to_string_lossy().to_string();
            self.sh("mkdir -p \"$(dirname \"$2\")\" && mv -f -- \"$1\" \"$2\"", &[&path, &stash_s])?;
            self.revoked.push(Revoked { path, stash, digest });
        }
        Ok(())
    }

    pub fn revoked_files(&self) -> Vec<String> {
        self.revoked.iter().map(|r| r.path.clone()).collect()
    }

    /// Puts revoked files back, verifying their digests.
    pub fn restore_revoked(&mut self) -> Result<()> {
        let revoked = std::mem::take(&mut self.revoked);
        for r in &revoked {
            let stash = r.stash.to_string_lossy().to_string();
            self.sh("mkdir -p \"$(dirname \"$2\")\" && rm -rf -- \"$2\" && mv -f -- \"$1\" \"$2\"", &[&stash, &r.path])?;
        }
        let paths: Vec<String> = revoked.iter().map(|r| r.path.clone()).collect();
        let now = self.digests(&paths)?;
        for r in &revoked {
            if now.get(&r.path).cloned().flatten().as_deref() != Some(r.digest.as_str()) {
                return Err(Error::RestoreMismatch { file: r.path.clone() });
            }
        }
        Ok(())
    }

    /// Runs exactly `suite` with `profile`; raw logs go under `log_dir`.
    pub fn run_tests(&mut self, suite: &[TestId], profile: &RunnerProfile, log_dir: Option<&Path>) -> Result<SuiteReport> {
        self.live()?;
        self.runs += 1;
        runner::run_suite(self, suite, profile, log_dir, self.runs)
    }

    /// A process command for an agent, running inside the environment.
    pub fn agent_command(&self, argv: &[String]) -> Result<Command> {
        self.live()?;
        self.provider.agent_command(&self.handle, &self.spec, argv)
    }

    pub fn destroy(&mut self) -> Result<()> {
        if self.handle.state == SandboxState::Destroyed {
            return Ok(());
        }
        self.provider.destroy(&mut self.handle)?;
        self.handle.state = SandboxState::Destroyed;
        Ok(())
    }
}

impl Drop for Sandbox {
    fn drop(&mut self) {
        if let Err(e) = self.destroy() {
            tracing::warn!(id = %self.handle.id, error = %e, "sandbox destroy failed");
        }
    }
}

/// Host-side staging of a truncated clone at `base`, shared by providers.
pub(crate) fn stage_shallow_clone(repo: &Path, base: &CommitId, dest: &Path) -> Result<()> {
    let repo = repo.canonicalize().map_err(|e| Error::ProvisionFailed { reason: format!("{}: {e}", repo.display()), retryable: false })?;
    let fail = |e: Error, retryable: bool| Error::ProvisionFailed { reason: e.to_string(), retryable };
    std::fs::create_dir_all(dest).map_err(|e| Error::ProvisionFailed { reason: e.to_string(), retryable: true })?;
    let run = |args: &[&str]| -> Result<Vec<u8>> {
        let mut cmd = crate::git::git_command(dest);
        cmd.args(args);
        crate::git::run_command(cmd, None, &format!("git {}", args.join(" ")))
    };
    run(&["init", "-q", "-b", "main"]).map_err(|e| fail(e, true))?;
    let url = format!("file://{}", repo.display());
    run(&["fetch", "-q", "--depth", "1", "--no-tags", &url, base.as_str()]).map_err(|e| fail(e, false))?;
    run(&["checkout", "-q", "-B", "main", base.as_str()]).map_err(|e| fail(e, false))?;
    run(&["config", "user.name", HARNESS_NAME]).map_err(|e| fail(e, true))?;
    run(&["config", "user.email", HARNESS_EMAIL]).map_err(|e| fail(e, true))?;
    run(&["reflog", "expire", "--expire=now", "--all"]).map_err(|e| fail(e, true))?;
    for leftover in ["logs", "FETCH_HEAD", "ORIG_HEAD"] {
        let p = dest.join(".git").join(leftover);
        if p.is_dir() {
            let _ = std::fs::remove_dir_all(&p);
        } else {
            let _ = std::fs::remove_file(&p);
        }
    }
    Ok(())
}

/// Extra env for test runs: plugin on the path, no bytecode in the workspace.
pub(crate) fn runner_env(harness: &Path) -> HashMap<String, String> {
    HashMap::from([
        ("PYTHONPATH".to_string(), harness.to_string_lossy().to_string()),
        ("PYTHONDONTWRITEBYTECODE".to_string(), "1".to_string()),
        ("PYTEST_ADDOPTS".to_string(), String::new()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_defaults_and_validation() {
        let spec = SandboxSpec::default();
        assert_eq!(spec.timeout_per_test_run, 1200);
        assert_eq!(spec.image_ref, "host-venv");
        spec.validate().unwrap();
        let bad = SandboxSpec { timeout_per_test_run: 0, ..SandboxSpec::default() };
        assert!(bad.validate().is_err());
        let bad = SandboxSpec { env_path: " ".into(), ..SandboxSpec::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn registry_lists_names_on_miss() {
        let r = ProviderRegistry::with_defaults();
        assert!(r.get("host-venv").is_ok());
        match r.get("nope") {
            Err(Error::UnknownStrategy { available, .. }) => assert!(available.contains("host-venv")),
            other => panic!("unexpected {:?}", other.err()),
        }
    }
}
