//! Plain subprocess provider (`host-venv`).
//!
//! The workspace is a truncated clone in a temp directory. When running as
//! root with an `agent_uid`, agent processes drop to that uid so frozen files
//! are OS-protected; `offline` requests enter a fresh network namespace.

use std::io::{Read, Write};
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use super::{stage_shallow_clone, ExecOutput, ExecRequest, NetworkMode, SandboxHandle, SandboxProvider, SandboxSpec, SandboxState};
use crate::error::{Error, Result};
use crate::types::CommitId;

#[derive(Debug, Clone, Default)]
pub struct HostProvider {
    /// Parent directory for sandboxes; the system temp dir when unset.
    pub base_dir: Option<PathBuf>,
}

/// Whether this process can create network namespaces.
pub fn network_isolation_available() -> bool {
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| {
        let mut cmd = Command::new("true");
        isolate(&mut cmd, true, None);
        cmd.stdout(Stdio::null()).stderr(Stdio::null()).status().is_ok_and(|s| s.success())
    })
}

pub fn is_root() -> bool {
    // SAFETY: geteuid has no preconditions.
    unsafe { libc::geteuid() == 0 }
}

/// Installs a pre-exec hook that optionally unshares the network namespace
/// and drops to `uid` (primary group = uid, no supplementary groups).
fn isolate(cmd: &mut Command, offline: bool, uid: Option<u32>) {
    if !offline && uid.is_none() {
        return;
    }
    // SAFETY: the closure only calls async-signal-safe libc functions.
    unsafe {
        cmd.pre_exec(move || {
            if offline && libc::unshare(libc::CLONE_NEWNET) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            if let Some(uid) = uid {
                if libc::setgroups(0, std::ptr::null()) != 0
                    || libc::setgid(uid as libc::gid_t) != 0
                    || libc::setuid(uid as libc::uid_t) != 0
                {
                    return Err(std::io::Error::last_os_error());
                }
            }
            Ok(())
        });
    }
}

/// Runs `cmd` to completion, killing its process group after `timeout`.
pub(crate) fn run_with_timeout(mut cmd: Command, stdin: Option<&[u8]>, timeout: Option<Duration>) -> Result<ExecOutput> {
    cmd.stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let label = format!("{:?}", cmd.get_program());
    let mut child = cmd.spawn().map_err(|e| Error::Command { command: label.clone(), stderr: e.to_string() })?;
    let writer = stdin.map(|data| {
        let mut pipe = child.stdin.take().expect("piped stdin");
        let data = data.to_vec();
        std::thread::spawn(move || {
            let _ = pipe.write_all(&data);
        })
    });
    let mut out_pipe = child.stdout.take().expect("piped stdout");
    let mut err_pipe = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });
    let deadline = timeout.map(|t| Instant::now() + t);
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| Error::Command { command: label.clone(), stderr: e.to_string() })? {
            break status;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            timed_out = true;
            // SAFETY: signalling our own child's process group.
            unsafe {
                libc::kill(-(child.id() as i32), libc::SIGKILL);
            }
            break child.wait().map_err(|e| Error::Command { command: label.clone(), stderr: e.to_string() })?;
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    if let Some(w) = writer {
        let _ = w.join();
    }
    Ok(ExecOutput {
        exit_code: if timed_out { None } else { status.code() },
        stdout: out_reader.join().unwrap_or_default(),
        stderr: err_reader.join().unwrap_or_default(),
        timed_out,
    })
}

impl SandboxProvider for HostProvider {
    fn name(&self) -> &'static str {
        "host-venv"
    }

    fn provision(&self, spec: &SandboxSpec, repo: &Path, base: &CommitId) -> Result<SandboxHandle> {
        let retryable = |e: std::io::Error| Error::ProvisionFailed { reason: e.to_string(), retryable: true };
        let parent = self.base_dir.clone().unwrap_or_else(std::env::temp_dir);
        std::fs::create_dir_all(&parent).map_err(retryable)?;
        let root = tempfile::Builder::new().prefix("cf-sbx-").tempdir_in(&parent).map_err(retryable)?.keep();
        let ws = root.join("ws");
        let private = root.join("priv");
        let result = (|| {
            std::fs::set_permissions(&root, std::fs::Permissions::from_mode(0o711)).map_err(retryable)?;
            std::fs::create_dir_all(private.join("harness")).map_err(retryable)?;
            std::fs::set_permissions(&private, std::fs::Permissions::from_mode(0o700)).map_err(retryable)?;
            stage_shallow_clone(repo, base, &ws)
        })();
        if let Err(e) = result {
            let _ = std::fs::remove_dir_all(&root);
            return Err(e);
        }
        if spec.agent_uid.is_some() && !is_root() {
            tracing::warn!("agent_uid requires root; frozen files will be digest-checked only");
        }
        Ok(SandboxHandle {
            id: root.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default(),
            workspace_root: ws.clone(),
            private_root: private,
            host_workspace: Some(ws),
            state: SandboxState::Provisioned,
            host_root: Some(root),
        })
    }

    fn exec(&self, handle: &SandboxHandle, _spec: &SandboxSpec, req: ExecRequest<'_>) -> Result<ExecOutput> {
        let (program, args) = req
            .argv
            .split_first()
            .ok_or_else(|| Error::invalid("exec", "empty argv"))?;
        let mut cmd = Command::new(program);
        cmd.args(args).current_dir(req.cwd.as_deref().unwrap_or(&handle.workspace_root));
        for (k, v) in &req.env {
            cmd.env(k, v);
        }
        isolate(&mut cmd, req.offline && network_isolation_available(), None);
        run_with_timeout(cmd, req.stdin, req.timeout)
    }

    fn agent_command(&self, handle: &SandboxHandle, spec: &SandboxSpec, argv: &[String]) -> Result<Command> {
        let (program, args) = argv.split_first().ok_or_else(|| Error::invalid("agent command", "empty argv"))?;
        let mut cmd = Command::new(program);
        cmd.args(args).current_dir(&handle.workspace_root);
        let offline = spec.network_mode == NetworkMode::Offline && network_isolation_available();
        let uid = spec.agent_uid.filter(|_| self.enforces_permissions(spec));
        if uid.is_some() {
            cmd.env("HOME", "/tmp");
        }
        isolate(&mut cmd, offline, uid);
        Ok(cmd)
    }

    fn destroy(&self, handle: &mut SandboxHandle) -> Result<()> {
        if let Some(root) = &handle.host_root {
            if root.exists() {
                std::fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
            }
        }
        handle.state = SandboxState::Destroyed;
        Ok(())
    }

    fn enforces_permissions(&self, spec: &SandboxSpec) -> bool {
        spec.agent_uid.is_some() && is_root()
    }

    fn enforces_network(&self, _spec: &SandboxSpec) -> bool {
        network_isolation_available()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timeout_kills_the_process_group() {
        let mut cmd = Command::new("sh");
        cmd.args(["-c", "sleep 30 & sleep 30"]);
        let start = Instant::now();
        let out = run_with_timeout(cmd, None, Some(Duration::from_millis(200))).unwrap();
        assert!(out.timed_out);
        assert_eq!(out.exit_code, None);
        assert!(start.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn stdin_round_trips() {
        let out = run_with_timeout(Command::new("cat"), Some(b"hello"), None).unwrap();
        assert_eq!(out.stdout, b"hello");
        assert!(out.success());
    }
}
