//! Request texts synthesized from a mined record.

use crate::miner::symbols::{ChangeKind, SymbolChange, SymbolKind};
use crate::miner::texts::TextKind;
use crate::miner::PullRequestRecord;

pub const HEADER: &str =
    "This is a task request in which we need to add new code or modify the existing code in the repository or do both.";
pub const RULE: &str = "* * *";
pub const NO_ISSUE: &str = "No separate issue entry present.";
pub const NO_DOCS: &str = "No documentation changes present.";
pub const NO_ADDITIONS: &str = "No new functions or classes were added in this commit.";
pub const CAVEAT: &str = "Please note that in addition to the newly added components mentioned above, you also need to make other code changes to ensure that the new feature can be executed properly.";

/// Splits a commit message into bullets: the subject without its PR
/// reference, then one bullet per body paragraph or list item.
pub fn message_bullets(message: &str) -> Vec<String> {
    let mut lines = message.lines();
    let subject = lines.next().unwrap_or_default();
    let subject = strip_pr_reference(subject);
    let mut bullets = Vec::new();
    if !subject.is_empty() {
        bullets.push(subject);
    }
    let mut para: Vec<&str> = Vec::new();
    let flush = |para: &mut Vec<&str>, bullets: &mut Vec<String>| {
        if !para.is_empty() {
            bullets.push(para.join(" "));
            para.clear();
        }
    };
    for line in lines {
        let t = line.trim();
        if t.is_empty() {
            flush(&mut para, &mut bullets);
        } else if let Some(item) = t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")) {
            flush(&mut para, &mut bullets);
            para.push(item.trim());
        } else {
            para.push(t);
        }
    }
    flush(&mut para, &mut bullets);
    bullets
}

fn strip_pr_reference(subject: &str) -> String {
    let s = subject.trim();
    match s.rfind("(#") {
        Some(i) if s.ends_with(')') && s[i + 2..s.len() - 1].chars().all(|c| c.is_ascii_digit()) => s[..i].trim_end().to_string(),
        _ => s.to_string(),
    }
}

/// The request text: header, task description bullets, linked issues and
/// documentation changes.
pub fn synthesize_task_description(record: &PullRequestRecord) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push_str("\n\n");
    out.push_str(RULE);
    out.push_str("\n\n# Task Request\n\n## Request\n\n### Task Description\n\n");
    let bullets = message_bullets(record.message());
    for b in &bullets {
        out.push_str(&format!("- {b}\n"));
    }
    if bullets.is_empty() {
        out.push_str("- (no description)\n");
    }

    out.push_str("\n### Issue Description\n\n");
    let issues: Vec<&str> = record
        .all_texts
        .iter()
        .filter(|b| b.kind == TextKind::Issue)
        .map(|b| b.text.trim())
        .filter(|t| !t.is_empty())
        .collect();
    if issues.is_empty() {
        out.push_str(NO_ISSUE);
        out.push('\n');
    } else {
        out.push_str(&issues.join("\n\n"));
        out.push('\n');
    }

    out.push_str("\n### Documentation Changes\n\n");
    let docs: Vec<String> = record
        .all_texts
        .iter()
        .filter(|b| b.kind == TextKind::Doc && !b.text.trim().is_empty())
        .map(|b| match &b.path {
            Some(p) => format!("`{p}`:\n\n{}", indent(b.text.trim_end())),
            None => b.text.trim_end().to_string(),
        })
        .collect();
    if docs.is_empty() {
        out.push_str(NO_DOCS);
        out.push('\n');
    } else {
        out.push_str(&docs.join("\n\n"));
        out.push('\n');
    }
    out
}

fn indent(text: &str) -> String {
    text.lines()
        .map(|l| if l.is_empty() { String::new() } else { format!("    {l}") })
        .collect::<Vec<_>>()
        .join("\n")
}

fn group_intro(kind: ChangeKind) -> (&'static str, &'static str) {
    match kind {
        ChangeKind::Added => (
            "There are several new functions or classes that need to be implemented, using the definitions below:",
            "Added Definitions",
        ),
        ChangeKind::Modified => (
            "There are several functions or classes that need to be modified, using the definitions below:",
            "Modified Definitions",
        ),
        ChangeKind::Deleted => ("There are several functions or classes that need to be removed:", "Deleted Definitions"),
    }
}

fn entry(change: &SymbolChange) -> String {
    let label = match change.symbol_kind {
        SymbolKind::Class => "Class",
        SymbolKind::Function | SymbolKind::Method => "Function",
    };
    let mut out = format!("### {label}: `{}`\n\n", change.qualified_name);
    let sig = change.signature.trim();
    if sig.contains('\n') {
        out.push_str(&format!("**Declaration:**\n\n{}\n", indent(sig)));
    } else if !sig.is_empty() {
        out.push_str(&format!("**Declaration:** `{sig}`\n"));
    }
    if let Some(doc) = change.docstring.as_deref().map(str::trim).filter(|d| !d.is_empty()) {
        out.push_str(&format!("\n**Docstring:** {doc}\n"));
    }
    out
}

/// Signatures and docstrings of changed symbols, grouped added, modified,
/// deleted. Never includes bodies.
pub fn extract_definition_description(changes: &[SymbolChange]) -> String {
    let of = |k: ChangeKind| changes.iter().filter(move |c| c.kind == k);
    let mut status = if of(ChangeKind::Added).next().is_some() {
        "Some new functions or classes were added in this commit.".to_string()
    } else {
        NO_ADDITIONS.to_string()
    };
    if of(ChangeKind::Modified).next().is_some() {
        status.push_str(" Some existing functions or classes were modified.");
    }
    if of(ChangeKind::Deleted).next().is_some() {
        status.push_str(" Some existing functions or classes were deleted.");
    }
    let mut out = status;
    out.push('\n');
    for kind in [ChangeKind::Added, ChangeKind::Modified, ChangeKind::Deleted] {
        let group: Vec<&SymbolChange> = of(kind).collect();
        if group.is_empty() {
            continue;
        }
        let (intro, title) = group_intro(kind);
        out.push_str(&format!("\n{intro}\n\n# {title}\n\n## Definitions\n"));
        for c in group {
            out.push('\n');
            out.push_str(&entry(c));
        }
    }
    out.push_str(&format!("\n{RULE}\n\n{CAVEAT}\n"));
    out
}

/// Task description and definitions as one document.
pub fn join_request(task_description: &str, definition_description: &str) -> String {
    format!("{}\n\n{RULE}\n\n{}", task_description.trim_end(), definition_description)
}

/// True when `text` contains a header or hunk line of `patch`.
pub fn leaks_patch(text: &str, patch: &str) -> bool {
    let markers: Vec<&str> = patch
        .lines()
        .filter(|l| l.starts_with("+++") || l.starts_with("---") || l.starts_with("@@"))
        .collect();
    text.lines().any(|l| l.starts_with("@@") || markers.contains(&l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::texts::TextBlock;
    use crate::types::{Category, CommitId, Confidence};

    fn record(texts: Vec<TextBlock>) -> PullRequestRecord {
        PullRequestRecord {
            commit_id: CommitId::parse(&"1".repeat(40)).unwrap(),
            parent_id: CommitId::parse(&"2".repeat(40)).unwrap(),
            pr_number: 7,
            merged_at: chrono::DateTime::from_timestamp(0, 0).unwrap(),
            all_texts: texts,
            changed_files: vec![],
            test_files: vec![],
            changes: vec![],
            fix_patch: String::new(),
            test_patch: String::new(),
            fail_to_pass: vec![],
            pass_to_pass: vec![],
            category: Category::Feature,
            category_confidence: Confidence::Low,
            flags: vec![],
        }
    }

    fn change(kind: ChangeKind, sk: SymbolKind, name: &str, sig: &str, doc: Option<&str>) -> SymbolChange {
        SymbolChange {
            kind,
            symbol_kind: sk,
            qualified_name: name.into(),
            file: "m.py".into(),
            signature: sig.into(),
            docstring: doc.map(String::from),
        }
    }

    #[test]
    fn bullets_from_subject_and_body() {
        let b = message_bullets("Add x (#12)\n\nFirst line\ncontinues.\n\n- item one\n- item two\n");
        assert_eq!(b, vec!["Add x", "First line continues.", "item one", "item two"]);
        assert_eq!(message_bullets("Fix (#a)"), vec!["Fix (#a)"]);
    }

    #[test]
    fn message_only_uses_both_placeholders() {
        let text = synthesize_task_description(&record(vec![TextBlock::message("Add x (#7)")]));
        assert!(text.starts_with(HEADER));
        assert!(text.contains("### Task Description\n\n- Add x\n"));
        assert!(text.contains(NO_ISSUE));
        assert!(text.contains(NO_DOCS));
    }

    #[test]
    fn issue_and_doc_sections_are_filled() {
        let text = synthesize_task_description(&record(vec![
            TextBlock::message("Fix y (#7)"),
            TextBlock { kind: TextKind::Issue, path: None, text: "y breaks on empty input".into() },
            TextBlock { kind: TextKind::Doc, path: Some("docs/y.md".into()), text: "Call y() with a list.".into() },
        ]));
        assert!(text.contains("### Issue Description\n\ny breaks on empty input\n"));
        assert!(text.contains("`docs/y.md`:\n\n    Call y() with a list.\n"));
        assert!(!text.contains(NO_ISSUE) && !text.contains(NO_DOCS));
    }

    #[test]
    fn empty_changes_give_the_fixed_sentence() {
        let d = extract_definition_description(&[]);
        assert!(d.starts_with(NO_ADDITIONS));
        assert!(d.trim_end().ends_with(CAVEAT));
        assert!(!d.contains("Definitions"));
    }

    #[test]
    fn groups_in_fixed_order() {
        let d = extract_definition_description(&[
            change(ChangeKind::Deleted, SymbolKind::Class, "m.D", "class D:", None),
            change(ChangeKind::Modified, SymbolKind::Method, "m.C.m", "def m(self):", Some("Does m.")),
            change(ChangeKind::Added, SymbolKind::Function, "m.f", "def f(x):", None),
        ]);
        let a = d.find("# Added Definitions").unwrap();
        let m = d.find("# Modified Definitions").unwrap();
        let x = d.find("# Deleted Definitions").unwrap();
        assert!(a < m && m < x);
        assert!(d.starts_with(
            "Some new functions or classes were added in this commit. Some existing functions or classes were modified. Some existing functions or classes were deleted."
        ));
        assert!(d.contains("### Function: `m.C.m`\n\n**Declaration:** `def m(self):`\n\n**Docstring:** Does m.\n"));
        assert!(d.contains("### Class: `m.D`"));
    }

    #[test]
    fn modified_only_matches_the_sample_wording() {
        let d = extract_definition_description(&[change(ChangeKind::Modified, SymbolKind::Function, "g", "def g():", None)]);
        assert!(d.starts_with(
            "No new functions or classes were added in this commit. Some existing functions or classes were modified.\n\nThere are several functions or classes that need to be modified, using the definitions below:\n\n# Modified Definitions\n\n## Definitions\n"
        ));
    }

    #[test]
    fn leak_detection() {
        let patch = "diff --git a/m.py b/m.py\n--- a/m.py\n+++ b/m.py\n@@ -1 +1 @@\n-a\n+b\n";
        assert!(leaks_patch("x\n+++ b/m.py\n", patch));
        assert!(leaks_patch("@@ -1 +1 @@", patch));
        assert!(!leaks_patch("- a bullet\n* * *\n", patch));
    }
}
