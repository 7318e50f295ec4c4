//! Container-runtime provider driven through a docker-compatible CLI.
//!
//! Uses only the `create`, `start`, `exec`, `cp` and `rm` verbs, so any
//! runtime with that surface (docker, podman, nerdctl) works. The image must
//! provide `git`, `sh`, coreutils and the configured interpreter.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::host::run_with_timeout;
use super::{stage_shallow_clone, ExecOutput, ExecRequest, NetworkMode, SandboxHandle, SandboxProvider, SandboxSpec, SandboxState};
use crate::error::{Error, Result};
use crate::types::CommitId;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerConfig {
    #[serde(default = "default_runtime")]
    pub runtime: String,
    /// Workspace path inside the container; `{id}` expands to the container name.
    #[serde(default = "default_workspace")]
    pub workspace_root: String,
    /// Harness-only directory inside the container; `{id}` expands as above.
    #[serde(default = "default_private")]
    pub private_root: String,
}

fn default_runtime() -> String {
    "docker".into()
}
fn default_workspace() -> String {
    "/workspace".into()
}
fn default_private() -> String {
    "/cf-harness".into()
}

impl Default for ContainerConfig {
    fn default() -> Self {
        Self { runtime: default_runtime(), workspace_root: default_workspace(), private_root: default_private() }
    }
}

#[derive(Debug, Default)]
pub struct ContainerProvider {
    pub config: ContainerConfig,
    counter: AtomicU64,
}

impl ContainerProvider {
    pub fn new(config: ContainerConfig) -> Self {
        Self { config, counter: AtomicU64::new(0) }
    }

    fn runtime(&self, args: &[&str]) -> Result<ExecOutput> {
        let mut cmd = Command::new(&self.config.runtime);
        cmd.args(args);
        let out = run_with_timeout(cmd, None, None)?;
        if out.success() {
            Ok(out)
        } else {
            Err(Error::Command { command: format!("{} {}", self.config.runtime, args.join(" ")), stderr: out.stderr_text() })
        }
    }

    fn exec_prefix(&self, handle: &SandboxHandle, cwd: &Path, user: Option<u32>, env: &[(String, String)], interactive: bool) -> Vec<String> {
        let mut argv = vec!["exec".to_string()];
        if interactive {
            argv.push("-i".into());
        }
        if let Some(uid) = user {
            argv.push("--user".into());
            argv.push(format!("{uid}:{uid}"));
        }
        argv.push("--workdir".into());
        argv.push(cwd.to_string_lossy().to_string());
        for (k, v) in env {
            argv.push("-e".into());
            argv.push(format!("{k}={v}"));
        }
        argv.push(handle.id.clone());
        argv
    }
}

impl SandboxProvider for ContainerProvider {
    fn name(&self) -> &'static str {
        "container"
    }

    fn provision(&self, spec: &SandboxSpec, repo: &Path, base: &CommitId) -> Result<SandboxHandle> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let id = format!("cf-{}-{}-{n}", base.short(), std::process::id());
        let ws = PathBuf::from(self.config.workspace_root.replace("{id}", &id));
        let private = PathBuf::from(self.config.private_root.replace("{id}", &id));
        let staging = tempfile::Builder::new()
            .prefix("cf-stage-")
            .tempdir()
            .map_err(|e| Error::ProvisionFailed { reason: e.to_string(), retryable: true })?;
        let staged = staging.path().join("ws");
        stage_shallow_clone(repo, base, &staged)?;

        let mut create: Vec<String> = vec!["create".into(), "--name".into(), id.clone()];
        if spec.network_mode == NetworkMode::Offline {
            create.extend(["--network".into(), "none".into()]);
        }
        if let Some(cpu) = spec.cpu_limit {
            create.extend(["--cpus".into(), cpu.to_string()]);
        }
        if let Some(mem) = spec.mem_limit_mb {
            create.extend(["--memory".into(), format!("{mem}m")]);
        }
        create.extend([spec.image_ref.clone(), "sleep".into(), "infinity".into()]);
        let create_args: Vec<&str> = create.iter().map(String::as_str).collect();
        let provision_err = |e: Error, retryable: bool| Error::ProvisionFailed { reason: e.to_string(), retryable };
        self.runtime(&create_args).map_err(|e| provision_err(e, false))?;
        let handle = SandboxHandle {
            id: id.clone(),
            workspace_root: ws.clone(),
            private_root: private.clone(),
            host_workspace: None,
            state: SandboxState::Provisioned,
            host_root: None,
        };
        let setup = || -> Result<()> {
            self.runtime(&["start", &id])?;
            let mk = format!(
                "mkdir -p '{}' '{}/harness' && chmod 0700 '{}'",
                ws.parent().unwrap_or(Path::new("/")).display(),
                private.display(),
                private.display()
            );
            let out = self.exec(&handle, spec, ExecRequest::new(&["sh", "-c", &mk]).with_cwd("/"))?;
            if !out.success() {
                return Err(Error::Command { command: "prepare container".into(), stderr: out.stderr_text() });
            }
            let src = format!("{}/.", staged.display());
            let dst = format!("{id}:{}", ws.display());
            self.runtime(&["cp", &src, &dst])?;
            Ok(())
        };
        if let Err(e) = setup() {
            let _ = self.runtime(&["rm", "-f", &id]);
            return Err(provision_err(e, true));
        }
        Ok(handle)
    }

    fn exec(&self, handle: &SandboxHandle, _spec: &SandboxSpec, req: ExecRequest<'_>) -> Result<ExecOutput> {
        let cwd = req.cwd.clone().unwrap_or_else(|| handle.workspace_root.clone());
        let mut argv = self.exec_prefix(handle, &cwd, None, &req.env, req.stdin.is_some());
        argv.extend(req.argv.iter().cloned());
        let mut cmd = Command::new(&self.config.runtime);
        cmd.args(&argv);
        run_with_timeout(cmd, req.stdin, req.timeout)
    }

    fn agent_command(&self, handle: &SandboxHandle, spec: &SandboxSpec, argv: &[String]) -> Result<Command> {
        let mut full = self.exec_prefix(handle, &handle.workspace_root, spec.agent_uid, &[], true);
        full.extend(argv.iter().cloned());
        let mut cmd = Command::new(&self.config.runtime);
        cmd.args(full);
        Ok(cmd)
    }

    fn destroy(&self, handle: &mut SandboxHandle) -> Result<()> {
        if handle.state != SandboxState::Destroyed {
            // Clear paths first: runtimes emulated on a host filesystem keep them otherwise.
            let ws = handle.workspace_root.to_string_lossy().to_string();
            let private = handle.private_root.to_string_lossy().to_string();
            let _ = self.exec(handle, &SandboxSpec::default(), ExecRequest::new(&["rm", "-rf", &ws, &private]).with_cwd("/"));
            self.runtime(&["rm", "-f", &handle.id])?;
        }
        handle.state = SandboxState::Destroyed;
        Ok(())
    }

    fn enforces_permissions(&self, spec: &SandboxSpec) -> bool {
        spec.agent_uid.is_some()
    }

    fn enforces_network(&self, spec: &SandboxSpec) -> bool {
        spec.network_mode == NetworkMode::Offline
    }
}
