//! Artifact store: plain JSON, JSONL and text files under one output root.
//! Reads are schema-checked and report the offending path and field.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const HOME_ENV: &str = "CHAINFORGE_HOME";

/// Layout of an output root. Holding a `Store` with [`Store::lock`] keeps
/// other writers out until it is dropped.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    lock: Option<File>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root, lock: None })
    }

    /// Output root from `CHAINFORGE_HOME`, else `./chainforge-out`.
    pub fn default_root() -> PathBuf {
        std::env::var_os(HOME_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("chainforge-out"))
    }

    pub fn lock(&mut self) -> Result<()> {
        if self.lock.is_some() {
            return Ok(());
        }
        let path = self.root.join(".lock");
        let f = File::options().create(true).truncate(false).write(true).open(&path).map_err(|e| Error::io(&path, e))?;
        match f.try_lock() {
            Ok(()) => {
                self.lock = Some(f);
                Ok(())
            }
            Err(std::fs::TryLockError::WouldBlock) => Err(Error::Locked(self.root.clone())),
            Err(std::fs::TryLockError::Error(e)) => Err(Error::io(&path, e)),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn mined(&self, repo: &str) -> PathBuf {
        self.root.join("mined").join(format!("{repo}.jsonl"))
    }

    pub fn mined_skips(&self, repo: &str) -> PathBuf {
        self.root.join("mined").join(format!("{repo}.skipped.jsonl"))
    }

    pub fn admitted(&self, repo: &str) -> PathBuf {
        self.root.join("validated").join(format!("{repo}.admitted.jsonl"))
    }

    pub fn validation_reports(&self, repo: &str) -> PathBuf {
        self.root.join("validated").join(format!("{repo}.reports.jsonl"))
    }

    pub fn validation_summary(&self, repo: &str) -> PathBuf {
        self.root.join("validated").join(format!("{repo}.summary.json"))
    }

    pub fn edges(&self, repo: &str) -> PathBuf {
        self.root.join("deps").join(format!("{repo}.edges.jsonl"))
    }

    pub fn interdependence(&self, repo: &str) -> PathBuf {
        self.root.join("deps").join(format!("{repo}.interdependence.json"))
    }

    pub fn tasks_dir(&self) -> PathBuf {
        self.root.join("tasks")
    }

    pub fn task(&self, task_id: &str) -> PathBuf {
        self.tasks_dir().join(format!("{task_id}.json"))
    }

    pub fn prd(&self, task_id: &str) -> PathBuf {
        self.tasks_dir().join(format!("{task_id}.prd.md"))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn artifact(path: &Path, field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Artifact { path: path.to_path_buf(), field: field.into(), reason: reason.into() }
}

fn field_name(path: &serde_path_to_error::Path) -> String {
    let s = path.to_string();
    if s == "." {
        "(root)".into()
    } else {
        s
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_json(path, &bytes)
}

pub fn parse_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| artifact(path, field_name(e.path()), e.inner().to_string()))?;
    de.end().map_err(|e| artifact(path, "(root)", e.to_string()))?;
    Ok(value)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut de = serde_json::Deserializer::from_str(line);
        let value = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| artifact(path, format!("line {}: {}", i + 1, field_name(e.path())), e.inner().to_string()))?;
        out.push(value);
    }
    Ok(out)
}

/// Writes through a temp file in the same directory and renames it.
pub fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    std::io::Write::write_all(&mut tmp, data).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Row {
        name: String,
        count: u32,
    }

    #[test]
    fn round_trip_and_field_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/rows.jsonl");
        let rows = vec![Row { name: "x".into(), count: 1 }, Row { name: "y".into(), count: 2 }];
        write_jsonl(&p, &rows).unwrap();
        assert_eq!(read_jsonl::<Row>(&p).unwrap(), rows);

        std::fs::write(&p, "{\"name\":\"x\",\"count\":1}\n{\"name\":\"y\",\"count\":\"two\"}\n").unwrap();
        match read_jsonl::<Row>(&p).unwrap_err() {
            Error::Artifact { path, field, .. } => {
                assert_eq!(path, p);
                assert_eq!(field, "line 2: count");
            }
            e => panic!("{e}"),
        }
        let j = dir.path().join("one.json");
        std::fs::write(&j, "{\"name\":\"x\",\"count\":1,\"extra\":true}").unwrap();
        assert!(matches!(read_json::<Row>(&j), Err(Error::Artifact { .. })));
    }

    #[test]
    fn second_lock_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Store::open(dir.path()).unwrap();
        a.lock().unwrap();
        let mut b = Store::open(dir.path()).unwrap();
        assert!(matches!(b.lock(), Err(Error::Locked(_))));
        drop(a);
        b.lock().unwrap();
    }
}
