//! Natural-language context for a PR: message, linked issues, doc changes.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::diff::Patch;
use crate::error::{Error, Result};
use crate::pathrules::PathClasses;
use crate::types::CommitId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextKind {
    Message,
    Issue,
    Doc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBlock {
    pub kind: TextKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub text: String,
}

impl TextBlock {
    pub fn message(text: impl Into<String>) -> Self {
        Self { kind: TextKind::Message, path: None, text: text.into() }
    }
}

/// Source of linked issue bodies for a commit.
pub trait MetadataSource: Send + Sync {
    fn name(&self) -> &'static str;
    fn linked_issues(&self, commit: &CommitId, pr_number: u64) -> Result<Vec<String>>;
}

/// `GET {base_url}/commits/{sha}/issues`, answering either a list of strings
/// or a list of objects carrying `body` (and optionally `title`).
#[derive(Debug, Clone)]
pub struct HttpMetadata {
    pub base_url: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl HttpMetadata {
    pub const TOKEN_ENV: &'static str = "REMOTE_META_TOKEN";

    pub fn from_env(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            token: std::env::var(Self::TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IssueEntry {
    Text(String),
    Object {
        #[serde(default)]
        title: Option<String>,
        #[serde(default)]
        body: Option<String>,
    },
}

impl IssueEntry {
    fn into_text(self) -> Option<String> {
        match self {
            IssueEntry::Text(t) => Some(t),
            IssueEntry::Object { title, body } => match (title, body) {
                (Some(t), Some(b)) => Some(format!("{t}\n\n{b}")),
                (t, b) => t.or(b),
            },
        }
        .filter(|t| !t.trim().is_empty())
    }
}

impl MetadataSource for HttpMetadata {
    fn name(&self) -> &'static str {
        "http"
    }

    fn linked_issues(&self, commit: &CommitId, _pr_number: u64) -> Result<Vec<String>> {
        let url = format!("{}/commits/{}/issues", self.base_url.trim_end_matches('/'), commit);
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut req = agent.get(&url);
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let body = req
            .call()
            .map_err(|e| Error::MetadataUnavailable(e.to_string()))?
            .into_string()
            .map_err(|e| Error::MetadataUnavailable(e.to_string()))?;
        let entries: Vec<IssueEntry> =
            serde_json::from_str(&body).map_err(|e| Error::MetadataUnavailable(format!("bad response: {e}")))?;
        Ok(entries.into_iter().filter_map(IssueEntry::into_text).collect())
    }
}

/// Issue bodies from a local JSON file keyed by `#<pr_number>` or commit id.
#[derive(Debug, Clone, Default)]
pub struct FileMetadata {
    entries: BTreeMap<String, Vec<String>>,
}

impl FileMetadata {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let entries = serde_path_to_error::deserialize(de).map_err(|e| Error::Artifact {
            path: path.to_path_buf(),
            field: e.path().to_string(),
            reason: e.inner().to_string(),
        })?;
        Ok(Self { entries })
    }
}

impl MetadataSource for FileMetadata {
    fn name(&self) -> &'static str {
        "file"
    }

    fn linked_issues(&self, commit: &CommitId, pr_number: u64) -> Result<Vec<String>> {
        let by_pr = (pr_number > 0).then(|| self.entries.get(&format!("#{pr_number}"))).flatten();
        Ok(by_pr.or_else(|| self.entries.get(commit.as_str())).cloned().unwrap_or_default())
    }
}

/// Builds the ordered text blocks for one PR. Metadata failures degrade to
/// the message and doc blocks and are reported through the returned flags.
pub fn harvest_texts(
    commit: &CommitId,
    pr_number: u64,
    message: &str,
    patch: &Patch,
    classes: &PathClasses,
    metadata: Option<&dyn MetadataSource>,
) -> (Vec<TextBlock>, Vec<String>) {
    let mut blocks = vec![TextBlock::message(message.trim_end())];
    let mut flags = Vec::new();
    if let Some(source) = metadata {
        match source.linked_issues(commit, pr_number) {
            Ok(issues) => blocks.extend(issues.into_iter().map(|text| TextBlock {
                kind: TextKind::Issue,
                path: None,
                text: text.trim_end().to_string(),
            })),
            Err(e) => {
                tracing::warn!(%commit, error = %e, "metadata unavailable");
                flags.push(format!("metadata-unavailable: {e}"));
            }
        }
    }
    for file in &patch.files {
        let path = file.path();
        if file.binary || !classes.is_doc(path) {
            continue;
        }
        let added: Vec<&str> = file.added_lines().map(|(_, l)| l).collect();
        if added.iter().all(|l| l.trim().is_empty()) {
            continue;
        }
        blocks.push(TextBlock { kind: TextKind::Doc, path: Some(path.to_string()), text: added.join("\n") });
    }
    (blocks, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathrules::PathRuleConfig;

    const DOC_DIFF: &str = "diff --git a/docs/usage.md b/docs/usage.md\n--- a/docs/usage.md\n+++ b/docs/usage.md\n@@ -1,1 +1,3 @@\n # Usage\n+\n+Call `subtract(a, b)`.\n";

    fn doc_patch() -> Patch {
        Patch::parse(DOC_DIFF).unwrap()
    }

    fn commit() -> CommitId {
        CommitId::parse(&"a".repeat(40)).unwrap()
    }

    struct Down;
    impl MetadataSource for Down {
        fn name(&self) -> &'static str {
            "down"
        }
        fn linked_issues(&self, _: &CommitId, _: u64) -> Result<Vec<String>> {
            Err(Error::MetadataUnavailable("offline".into()))
        }
    }

    #[test]
    fn message_only() {
        let classes = PathClasses::compile(&PathRuleConfig::default()).unwrap();
        let (blocks, flags) = harvest_texts(&commit(), 0, "Add x\n", &Patch::default(), &classes, None);
        assert_eq!(blocks, vec![TextBlock::message("Add x")]);
        assert!(flags.is_empty());
    }

    #[test]
    fn doc_added_lines_become_a_block() {
        let classes = PathClasses::compile(&PathRuleConfig::default()).unwrap();
        let (blocks, _) = harvest_texts(&commit(), 0, "Docs", &doc_patch(), &classes, None);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[1].kind, TextKind::Doc);
        assert_eq!(blocks[1].path.as_deref(), Some("docs/usage.md"));
        assert_eq!(blocks[1].text, "\nCall `subtract(a, b)`.");
    }

    #[test]
    fn metadata_failure_is_flagged_not_fatal() {
        let classes = PathClasses::compile(&PathRuleConfig::default()).unwrap();
        let (blocks, flags) = harvest_texts(&commit(), 3, "m", &Patch::default(), &classes, Some(&Down));
        assert_eq!(blocks.len(), 1);
        assert!(flags[0].starts_with("metadata-unavailable"));
    }

    #[test]
    fn file_metadata_prefers_pr_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("issues.json");
        std::fs::write(&p, format!(r##"{{"#7": ["issue seven"], "{}": ["by sha"]}}"##, commit())).unwrap();
        let m = FileMetadata::load(&p).unwrap();
        assert_eq!(m.linked_issues(&commit(), 7).unwrap(), vec!["issue seven"]);
        assert_eq!(m.linked_issues(&commit(), 0).unwrap(), vec!["by sha"]);
        std::fs::write(&p, r#"{"x": [1]}"#).unwrap();
        assert!(matches!(FileMetadata::load(&p), Err(Error::Artifact { .. })));
    }

    #[test]
    fn issue_entries_accept_both_shapes() {
        let v: Vec<IssueEntry> = serde_json::from_str(r#"["a", {"title": "T", "body": "B"}, {"body": ""}]"#).unwrap();
        let texts: Vec<_> = v.into_iter().filter_map(IssueEntry::into_text).collect();
        assert_eq!(texts, vec!["a", "T\n\nB"]);
    }
}
