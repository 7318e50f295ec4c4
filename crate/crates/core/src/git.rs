//! Thin wrapper over the `git` command-line tool.
//!
//! All object-database access in the pipeline goes through here. Commands run
//! with a fixed locale and `safe.directory=*` so that sandboxes whose
//! workspaces are owned by an unprivileged agent user stay readable.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use chrono::{TimeZone, Utc};

use crate::error::{Error, Result};
use crate::types::{CommitId, Timestamp};

#[derive(Debug, Clone)]
pub struct Git {
    dir: PathBuf,
}

/// One entry of a first-parent walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainlineCommit {
    pub id: CommitId,
    pub tree: String,
    pub parents: Vec<CommitId>,
    pub committed_at: Timestamp,
}

pub fn git_command(dir: &Path) -> Command {
    let mut cmd = Command::new("git");
    cmd.arg("-C")
        .arg(dir)
        .args(["-c", "safe.directory=*", "-c", "core.autocrlf=false", "-c", "color.ui=false"])
        .env("LC_ALL", "C")
        .env("GIT_TERMINAL_PROMPT", "0")
        .env_remove("GIT_DIR")
        .env_remove("GIT_INDEX_FILE")
        .env_remove("GIT_WORK_TREE");
    cmd
}

impl Git {
    /// Opens a working tree or bare repository, verifying the object database.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let unreadable = |reason: String| Error::RepoUnreadable { path: path.to_path_buf(), reason };
        if !path.exists() {
            return Err(unreadable("path does not exist".into()));
        }
        let git = Self { dir: path.to_path_buf() };
        git.run(&["rev-parse", "--git-dir"]).map_err(|e| unreadable(e.to_string()))?;
        Ok(git)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn command(&self) -> Command {
        git_command(&self.dir)
    }

    pub fn run(&self, args: &[&str]) -> Result<String> {
        let out = self.run_bytes(args, None, &[])?;
        Ok(String::from_utf8_lossy(&out).into_owned())
    }

    pub fn run_bytes(&self, args: &[&str], stdin: Option<&[u8]>, env: &[(&str, &Path)]) -> Result<Vec<u8>> {
        let mut cmd = self.command();
        cmd.args(args);
        for (k, v) in env {
            cmd.env(k, v);
        }
        run_command(cmd, stdin, &format!("git {}", args.join(" ")))
    }

    pub fn rev_parse(&self, rev: &str) -> Result<CommitId> {
        CommitId::parse(&self.run(&["rev-parse", "--verify", &format!("{rev}^{{commit}}")])?)
    }

    pub fn tree_of(&self, rev: &str) -> Result<String> {
        Ok(self.run(&["rev-parse", "--verify", &format!("{rev}^{{tree}}")])?.trim().to_string())
    }

    pub fn is_ancestor(&self, ancestor: &CommitId, descendant: &CommitId) -> bool {
        self.command()
            .args(["merge-base", "--is-ancestor", ancestor.as_str(), descendant.as_str()])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok_and(|s| s.success())
    }

    /// First-parent history of `branch`, oldest first.
    pub fn first_parent_log(&self, branch: &str) -> Result<Vec<MainlineCommit>> {
        let out = self.run(&["log", "--first-parent", "--format=%H%x09%T%x09%P%x09%ct", branch, "--"])?;
        let mut commits = Vec::new();
        for line in out.lines().filter(|l| !l.is_empty()) {
            let mut parts = line.split('\t');
            let (Some(id), Some(tree), Some(parents), Some(ct)) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::invalid("git log output", line.to_string()));
            };
            let secs: i64 = ct.parse().map_err(|_| Error::invalid("commit time", ct.to_string()))?;
            commits.push(MainlineCommit {
                id: CommitId::parse(id)?,
                tree: tree.to_string(),
                parents: parents.split_whitespace().map(CommitId::parse).collect::<Result<_>>()?,
                committed_at: Utc
                    .timestamp_opt(secs, 0)
                    .single()
                    .ok_or_else(|| Error::invalid("commit time", ct.to_string()))?,
            });
        }
        commits.reverse();
        Ok(commits)
    }

    /// Raw commit message (subject and body).
    pub fn message(&self, rev: &CommitId) -> Result<String> {
        let raw = self.run_bytes(&["log", "-1", "--format=%B", rev.as_str()], None, &[])?;
        Ok(String::from_utf8_lossy(&raw).trim_end().to_string())
    }

    /// Full diff between two commits as raw bytes, renames disabled so each
    /// file section names a single path.
    pub fn diff(&self, from: &CommitId, to: &CommitId) -> Result<Vec<u8>> {
        self.run_bytes(
            &[
                "diff",
                "--binary",
                "--no-renames",
                "--no-ext-diff",
                "--no-color",
                "--full-index",
                from.as_str(),
                to.as_str(),
                "--",
            ],
            None,
            &[],
        )
    }

    pub fn show_file(&self, rev: &str, path: &str) -> Result<Option<Vec<u8>>> {
        let spec = format!("{rev}:{path}");
        let exists = self
            .command()
            .args(["cat-file", "-e", &spec])
            .stderr(Stdio::null())
            .status()
            .is_ok_and(|s| s.success());
        if !exists {
            return Ok(None);
        }
        self.run_bytes(&["cat-file", "blob", &spec], None, &[]).map(Some)
    }

    pub fn blob_id(&self, rev: &CommitId, path: &str) -> Result<Option<String>> {
        let out = self.command().args(["rev-parse", "--verify", "-q", &format!("{rev}:{path}")]).output();
        match out {
            Ok(o) if o.status.success() => Ok(Some(String::from_utf8_lossy(&o.stdout).trim().to_string())),
            _ => Ok(None),
        }
    }

    pub fn ls_files(&self, rev: &str) -> Result<Vec<String>> {
        let out = self.run_bytes(&["ls-tree", "-r", "-z", "--name-only", rev], None, &[])?;
        Ok(out
            .split(|b| *b == 0)
            .filter(|s| !s.is_empty())
            .map(|s| String::from_utf8_lossy(s).into_owned())
            .collect())
    }

    /// Applies `patches` in order to the tree of `base` using a scratch index
    /// and returns the resulting tree id. The working tree is not touched.
    pub fn apply_to_tree(&self, base: &CommitId, patches: &[&str]) -> Result<String> {
        let scratch = tempfile::Builder::new()
            .prefix("cf-index")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let index = scratch.path().join("index");
        let env = [("GIT_INDEX_FILE", index.as_path())];
        self.run_bytes(&["read-tree", base.as_str()], None, &env)?;
        for patch in patches.iter().filter(|p| !p.is_empty()) {
            self.run_bytes(&["apply", "--cached", "--whitespace=nowarn", "-"], Some(patch.as_bytes()), &env)
                .map_err(|e| match e {
                    Error::Command { stderr, .. } => conflict_from_stderr(&stderr),
                    other => other,
                })?;
        }
        Ok(String::from_utf8_lossy(&self.run_bytes(&["write-tree"], None, &env)?).trim().to_string())
    }

    /// Writes the contents of a commit or tree into `dest`.
    pub fn export_tree(&self, rev: &str, dest: &Path) -> Result<()> {
        let tar = self.run_bytes(&["archive", "--format=tar", rev], None, &[])?;
        untar(&tar, dest)
    }

    /// Blames `lines` (1-based) of `file` as of `rev`, ignoring whitespace.
    pub fn blame_lines(&self, rev: &CommitId, file: &str, lines: &[u32]) -> Result<BTreeMap<u32, CommitId>> {
        if lines.is_empty() {
            return Ok(BTreeMap::new());
        }
        let mut args: Vec<String> = vec!["blame".into(), "--porcelain".into(), "-w".into()];
        for range in contiguous_ranges(lines) {
            args.push("-L".into());
            args.push(format!("{},{}", range.0, range.1));
        }
        args.push(rev.to_string());
        args.push("--".into());
        args.push(file.to_string());
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = self
            .run_bytes(&argv, None, &[])
            .map_err(|e| Error::BlameFailed { file: file.to_string(), reason: e.to_string() })?;
        let text = String::from_utf8_lossy(&out);
        let mut result = BTreeMap::new();
        for line in text.lines() {
            let mut parts = line.split(' ');
            let (Some(sha), Some(_orig), Some(final_no)) = (parts.next(), parts.next(), parts.next()) else {
                continue;
            };
            if sha.len() != 40 || !sha.bytes().all(|b| b.is_ascii_hexdigit()) {
                continue;
            }
            if let (Ok(id), Ok(n)) = (CommitId::parse(sha), final_no.parse::<u32>()) {
                result.insert(n, id);
            }
        }
        Ok(result)
    }
}

pub(crate) fn conflict_from_stderr(stderr: &str) -> Error {
    // `error: patch failed: src/m.py:12` / `error: src/m.py: already exists in index`
    let file = stderr
        .lines()
        .find_map(|l| {
            l.strip_prefix("error: patch failed: ")
                .map(|r| r.rsplit_once(':').map_or(r, |(f, _)| f).to_string())
                .or_else(|| {
                    l.strip_prefix("error: ")
                        .and_then(|r| r.split_once(": "))
                        .map(|(f, _)| f.to_string())
                })
        })
        .unwrap_or_else(|| "<unknown>".to_string());
    Error::PatchConflict { file, context: stderr.trim().to_string() }
}

fn contiguous_ranges(lines: &[u32]) -> Vec<(u32, u32)> {
    let mut sorted: Vec<u32> = lines.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut ranges: Vec<(u32, u32)> = Vec::new();
    for n in sorted {
        match ranges.last_mut() {
            Some((_, end)) if *end + 1 == n => *end = n,
            _ => ranges.push((n, n)),
        }
    }
    ranges
}

/// Unpacks a tar stream into `dest`, creating it first.
pub(crate) fn untar(tar: &[u8], dest: &Path) -> Result<()> {
    std::fs::create_dir_all(dest).map_err(|e| Error::io(dest, e))?;
    let mut cmd = Command::new("tar");
    cmd.args(["-x", "-f", "-", "-C"]).arg(dest);
    run_command(cmd, Some(tar), "tar -x").map(|_| ())
}

pub(crate) fn run_command(mut cmd: Command, stdin: Option<&[u8]>, label: &str) -> Result<Vec<u8>> {
    cmd.stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = cmd
        .spawn()
        .map_err(|e| Error::Command { command: label.to_string(), stderr: e.to_string() })?;
    if let Some(input) = stdin {
        let mut pipe = child.stdin.take().expect("piped stdin");
        let input = input.to_vec();
        // Feed stdin from a thread so large inputs cannot deadlock against stdout.
        let writer = std::thread::spawn(move || pipe.write_all(&input));
        let out = child
            .wait_with_output()
            .map_err(|e| Error::Command { command: label.to_string(), stderr: e.to_string() })?;
        let _ = writer.join();
        return finish(out, label);
    }
    let out = child
        .wait_with_output()
        .map_err(|e| Error::Command { command: label.to_string(), stderr: e.to_string() })?;
    finish(out, label)
}

fn finish(out: std::process::Output, label: &str) -> Result<Vec<u8>> {
    if out.status.success() {
        Ok(out.stdout)
    } else {
        Err(Error::Command {
            command: label.to_string(),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_merge_adjacent_lines() {
        assert_eq!(contiguous_ranges(&[5, 1, 2, 3, 9, 10]), vec![(1, 3), (5, 5), (9, 10)]);
        assert!(contiguous_ranges(&[]).is_empty());
    }

    #[test]
    fn conflict_names_the_file() {
        let e = conflict_from_stderr("error: patch failed: src/m.py:12\nerror: src/m.py: patch does not apply");
        assert!(matches!(e, Error::PatchConflict { ref file, .. } if file == "src/m.py"));
    }

    #[test]
    fn open_rejects_missing_path() {
        assert!(matches!(Git::open("/definitely/not/here"), Err(Error::RepoUnreadable { .. })));
    }
}
