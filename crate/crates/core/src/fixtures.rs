//! Synthetic fixture repositories described in TOML.
//!
//! A fixture lists commits as full file contents. Building one replays them
//! into a fresh git repository with fixed identities and dates, so the same
//! description always yields the same commit ids.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::git::{git_command, run_command, Git};
use crate::types::{CommitId, Timestamp};

const AUTHOR_NAME: &str = "Fixture Author";
const AUTHOR_EMAIL: &str = "author@fixtures.invalid";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub name: String,
    #[serde(default = "default_branch")]
    pub branch: String,
    pub start: Timestamp,
    #[serde(default = "default_step")]
    pub step_hours: i64,
    pub commits: Vec<FixtureCommit>,
    /// Linked issue bodies keyed by `#<pr>`.
    #[serde(default)]
    pub issues: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub breaker: Option<BreakerSpec>,
}

fn default_branch() -> String {
    "main".into()
}
fn default_step() -> i64 {
    24
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureCommit {
    pub message: String,
    /// Full contents of files written by this commit.
    #[serde(default)]
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub delete: Vec<String>,
}

/// Files a breaker agent writes after its gold fix at chain step `at_ordinal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakerSpec {
    pub at_ordinal: usize,
    pub files: BTreeMap<String, String>,
}

impl BreakerSpec {
    pub fn load(path: &Path) -> Result<Self> {
        crate::store::read_json(path)
    }
}

#[derive(Debug, Clone)]
pub struct BuiltFixture {
    pub name: String,
    pub repo: PathBuf,
    pub commits: Vec<CommitId>,
    /// Issue metadata file, when the fixture declares issues.
    pub issues: Option<PathBuf>,
    pub breaker: Option<PathBuf>,
}

impl FixtureSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if spec.commits.is_empty() {
            return Err(Error::Config(format!("fixture `{}` has no commits", spec.name)));
        }
        if spec.step_hours <= 0 {
            return Err(Error::Config("step_hours must be positive".into()));
        }
        Ok(spec)
    }

    /// Builds `<dest>/<name>` (replacing it) plus side files next to it.
    pub fn build(&self, dest: &Path) -> Result<BuiltFixture> {
        let repo = dest.join(&self.name);
        if repo.exists() {
            std::fs::remove_dir_all(&repo).map_err(|e| Error::io(&repo, e))?;
        }
        std::fs::create_dir_all(&repo).map_err(|e| Error::io(&repo, e))?;
        let git = |args: &[&str], date: Option<&str>| -> Result<Vec<u8>> {
            let mut cmd = git_command(&repo);
            cmd.args(args)
                .env("GIT_CONFIG_NOSYSTEM", "1")
                .env("GIT_CONFIG_GLOBAL", "/dev/null")
                .env("GIT_AUTHOR_NAME", AUTHOR_NAME)
                .env("GIT_AUTHOR_EMAIL", AUTHOR_EMAIL)
                .env("GIT_COMMITTER_NAME", AUTHOR_NAME)
                .env("GIT_COMMITTER_EMAIL", AUTHOR_EMAIL);
            if let Some(d) = date {
                cmd.env("GIT_AUTHOR_DATE", d).env("GIT_COMMITTER_DATE", d);
            }
            run_command(cmd, None, &format!("git {}", args.join(" ")))
        };
        git(&["init", "-q", "-b", &self.branch], None)?;

        let mut commits = Vec::new();
        for (i, c) in self.commits.iter().enumerate() {
            for (path, content) in &c.files {
                let p = repo.join(path);
                if let Some(parent) = p.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                std::fs::write(&p, content).map_err(|e| Error::io(&p, e))?;
            }
            for path in &c.delete {
                let p = repo.join(path);
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
            let at = self.start + Duration::hours(self.step_hours * i as i64);
            let date = at.format("%Y-%m-%dT%H:%M:%S+0000").to_string();
            git(&["add", "-A"], None)?;
            git(&["commit", "-q", "--allow-empty", "--no-verify", "-m", c.message.trim()], Some(&date))?;
            commits.push(Git::open(&repo)?.rev_parse("HEAD")?);
        }

        let issues = if self.issues.is_empty() {
            None
        } else {
            let p = dest.join(format!("{}.issues.json", self.name));
            write_json(&p, &self.issues)?;
            Some(p)
        };
        let breaker = match &self.breaker {
            Some(b) => {
                let p = dest.join(format!("{}.breaker.json", self.name));
                write_json(&p, b)?;
                Some(p)
            }
            None => None,
        };
        Ok(BuiltFixture { name: self.name.clone(), repo, commits, issues, breaker })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "tiny"
start = "2024-01-01T00:00:00Z"
[[commits]]
message = "one"
[commits.files]
"a.txt" = "1\n"
[[commits]]
message = "two (#7)"
delete = ["a.txt"]
[commits.files]
"b.txt" = "2\n"
"#;

    #[test]
    fn builds_are_reproducible() {
        let spec = FixtureSpec::parse(SMALL).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = spec.build(d1.path()).unwrap();
        let b = spec.build(d2.path()).unwrap();
        assert_eq!(a.commits, b.commits);
        assert_eq!(a.commits.len(), 2);
        let git = Git::open(&a.repo).unwrap();
        assert_eq!(git.ls_files("HEAD").unwrap(), vec!["b.txt".to_string()]);
        assert!(a.issues.is_none() && a.breaker.is_none());
    }

    #[test]
    fn rejects_unknown_keys_and_empty_history() {
        assert!(FixtureSpec::parse("name = \"x\"\nstart = \"2024-01-01T00:00:00Z\"\ncommits = []\n").is_err());
        assert!(FixtureSpec::parse(&format!("{SMALL}\nbogus = 1\n")).is_err());
    }
}
