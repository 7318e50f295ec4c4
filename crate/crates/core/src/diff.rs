//! Unified diff parsing and path-based patch splitting.
//!
//! The parser keeps each file section's raw bytes so that a split patch is a
//! byte-exact concatenation of sections from the original diff. Hunk bodies
//! are decoded only as far as line numbering requires.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::pathrules::PathRules;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Line {
    Context(String),
    Added(String),
    Removed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    pub old_start: u32,
    pub old_len: u32,
    pub new_start: u32,
    pub new_len: u32,
    pub lines: Vec<Line>,
}

impl Hunk {
    /// `(new_line_number, text)` for every added line.
    pub fn added(&self) -> impl Iterator<Item = (u32, &str)> {
        self.numbered().filter_map(|(_, new, l)| match l {
            Line::Added(t) => Some((new, t.as_str())),
            _ => None,
        })
    }

    /// `(old_line_number, text)` for every removed line.
    pub fn removed(&self) -> impl Iterator<Item = (u32, &str)> {
        self.numbered().filter_map(|(old, _, l)| match l {
            Line::Removed(t) => Some((old, t.as_str())),
            _ => None,
        })
    }

    /// `(old_line_number, text)` for context and removed lines.
    pub fn old_side(&self) -> impl Iterator<Item = (u32, &str)> {
        self.numbered().filter_map(|(old, _, l)| match l {
            Line::Context(t) | Line::Removed(t) => Some((old, t.as_str())),
            Line::Added(_) => None,
        })
    }

    // Yields (old_no, new_no, line) where the numbers are those the line has
    // (or would have) on each side.
    fn numbered(&self) -> impl Iterator<Item = (u32, u32, &Line)> {
        let mut old = self.old_start;
        let mut new = self.new_start;
        self.lines.iter().map(move |l| {
            let at = (old, new, l);
            match l {
                Line::Context(_) => {
                    old += 1;
                    new += 1;
                }
                Line::Added(_) => new += 1,
                Line::Removed(_) => old += 1,
            }
            at
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileDiff {
    /// `None` for created files.
    pub old_path: Option<String>,
    /// `None` for deleted files.
    pub new_path: Option<String>,
    pub binary: bool,
    pub hunks: Vec<Hunk>,
    /// The complete section text, header included.
    pub raw: String,
}

impl FileDiff {
    /// The path this section is known by: the new path unless the file was deleted.
    pub fn path(&self) -> &str {
        self.new_path
            .as_deref()
            .or(self.old_path.as_deref())
            .unwrap_or_default()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.old_path.iter().chain(self.new_path.iter()).map(String::as_str)
    }

    pub fn is_created(&self) -> bool {
        self.old_path.is_none()
    }

    pub fn is_deleted(&self) -> bool {
        self.new_path.is_none()
    }

    pub fn added_lines(&self) -> impl Iterator<Item = (u32, &str)> {
        self.hunks.iter().flat_map(Hunk::added)
    }

    pub fn removed_lines(&self) -> impl Iterator<Item = (u32, &str)> {
        self.hunks.iter().flat_map(Hunk::removed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Patch {
    pub files: Vec<FileDiff>,
}

impl Patch {
    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).run()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn file_set(&self) -> BTreeSet<String> {
        self.files.iter().map(|f| f.path().to_string()).collect()
    }

    /// Concatenated raw text of every section, in order.
    pub fn to_text(&self) -> String {
        self.files.iter().map(|f| f.raw.as_str()).collect()
    }
}

/// Routes every file section of `full_diff` to the test side when any of its
/// paths matches `test_rules`, otherwise to the fix side.
///
/// Returns `(fix_patch, test_patch)` as raw text.
pub fn split_patch(full_diff: &str, test_rules: &PathRules) -> Result<(String, String)> {
    let patch = Patch::parse(full_diff)?;
    let mut fix = String::new();
    let mut test = String::new();
    for f in &patch.files {
        if f.paths().any(|p| test_rules.matches(p)) {
            test.push_str(&f.raw);
        } else {
            fix.push_str(&f.raw);
        }
    }
    Ok((fix, test))
}

struct Parser<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self { lines: text.split_inclusive('\n').collect(), pos: 0 }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::MalformedDiff { line: self.pos + 1, reason: reason.into() }
    }

    fn run(mut self) -> Result<Patch> {
        let mut files = Vec::new();
        while let Some(line) = self.peek() {
            if line.starts_with("diff --git ") {
                files.push(self.git_section()?);
            } else if line.starts_with("--- ")
                && self.lines.get(self.pos + 1).is_some_and(|n| n.starts_with("+++ "))
            {
                files.push(self.plain_section()?);
            } else if line.starts_with("@@") {
                return Err(self.malformed("hunk outside of a file section"));
            } else {
                // Preamble (commit message, `index` noise between sections, ...).
                self.pos += 1;
            }
        }
        Ok(Patch { files })
    }

    fn git_section(&mut self) -> Result<FileDiff> {
        let start = self.pos;
        let header = strip_eol(self.lines[self.pos]);
        let (mut old_path, mut new_path) = split_git_header(&header["diff --git ".len()..])
            .ok_or_else(|| self.malformed("unparseable `diff --git` header"))?;
        self.pos += 1;
        let mut binary = false;
        let mut created = false;
        let mut deleted = false;
        while let Some(line) = self.peek() {
            if line.starts_with("diff --git ") || line.starts_with("@@") {
                break;
            }
            let l = strip_eol(line);
            if l.starts_with("new file mode") {
                created = true;
            } else if l.starts_with("deleted file mode") {
                deleted = true;
            } else if let Some(p) = l.strip_prefix("rename from ").or(l.strip_prefix("copy from ")) {
                old_path = unquote(p);
            } else if let Some(p) = l.strip_prefix("rename to ").or(l.strip_prefix("copy to ")) {
                new_path = unquote(p);
            } else if let Some(p) = l.strip_prefix("--- ") {
                if let Some(p) = side_path(p, "a/") {
                    old_path = p;
                }
            } else if let Some(p) = l.strip_prefix("+++ ") {
                if let Some(p) = side_path(p, "b/") {
                    new_path = p;
                }
            } else if l.starts_with("Binary files ") || l == "GIT binary patch" {
                binary = true;
            }
            self.pos += 1;
        }
        let hunks = if binary { Vec::new() } else { self.hunks()? };
        Ok(FileDiff {
            old_path: (!created).then_some(old_path),
            new_path: (!deleted).then_some(new_path),
            binary,
            hunks,
            raw: self.lines[start..self.pos].concat(),
        })
    }

    fn plain_section(&mut self) -> Result<FileDiff> {
        let start = self.pos;
        let old = strip_eol(self.lines[self.pos])["--- ".len()..].to_string();
        let new = strip_eol(self.lines[self.pos + 1])["+++ ".len()..].to_string();
        self.pos += 2;
        let old_path = side_path(&old, "a/");
        let new_path = side_path(&new, "b/");
        if old_path.is_none() && new_path.is_none() {
            return Err(self.malformed("both sides are /dev/null"));
        }
        let hunks = self.hunks()?;
        Ok(FileDiff {
            old_path,
            new_path,
            binary: false,
            hunks,
            raw: self.lines[start..self.pos].concat(),
        })
    }

    fn hunks(&mut self) -> Result<Vec<Hunk>> {
        let mut hunks = Vec::new();
        while let Some(line) = self.peek() {
            if !line.starts_with("@@") {
                break;
            }
            let (old_start, old_len, new_start, new_len) =
                parse_hunk_header(strip_eol(line)).ok_or_else(|| self.malformed("bad hunk header"))?;
            self.pos += 1;
            let (mut old_left, mut new_left) = (old_len, new_len);
            let mut lines = Vec::new();
            while old_left > 0 || new_left > 0 {
                let Some(raw) = self.peek() else {
                    return Err(self.malformed("hunk truncated"));
                };
                let body = strip_eol(raw);
                let (tag, text) = match body.chars().next() {
                    Some(c) => (c, &body[c.len_utf8()..]),
                    None => (' ', ""),
                };
                match tag {
                    ' ' if old_left > 0 && new_left > 0 => {
                        old_left -= 1;
                        new_left -= 1;
                        lines.push(Line::Context(text.to_string()));
                    }
                    '-' if old_left > 0 => {
                        old_left -= 1;
                        lines.push(Line::Removed(text.to_string()));
                    }
                    '+' if new_left > 0 => {
                        new_left -= 1;
                        lines.push(Line::Added(text.to_string()));
                    }
                    '\\' => {}
                    _ => return Err(self.malformed(format!("unexpected hunk line `{body}`"))),
                }
                self.pos += 1;
            }
            while self.peek().is_some_and(|l| l.starts_with('\\')) {
                self.pos += 1;
            }
            hunks.push(Hunk { old_start, old_len, new_start, new_len, lines });
        }
        Ok(hunks)
    }
}

fn strip_eol(line: &str) -> &str {
    line.strip_suffix('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).unwrap_or(line)
}

fn parse_hunk_header(line: &str) -> Option<(u32, u32, u32, u32)> {
    let rest = line.strip_prefix("@@ -")?;
    let end = rest.find(" @@")?;
    let (old, new) = rest[..end].split_once(" +")?;
    let range = |s: &str| -> Option<(u32, u32)> {
        match s.split_once(',') {
            Some((a, b)) => Some((a.parse().ok()?, b.parse().ok()?)),
            None => Some((s.parse().ok()?, 1)),
        }
    };
    let (os, ol) = range(old)?;
    let (ns, nl) = range(new)?;
    Some((os, ol, ns, nl))
}

fn side_path(raw: &str, prefix: &str) -> Option<String> {
    // Strip a trailing tab-separated timestamp as written by `diff -u`.
    let raw = raw.split('\t').next().unwrap_or(raw);
    if raw == "/dev/null" {
        return None;
    }
    let p = unquote(raw);
    Some(p.strip_prefix(prefix).map(str::to_string).unwrap_or(p))
}

fn split_git_header(rest: &str) -> Option<(String, String)> {
    if rest.starts_with('"') {
        let (a, tail) = take_quoted(rest)?;
        let tail = tail.trim_start();
        let b = if tail.starts_with('"') { take_quoted(tail)?.0 } else { tail.to_string() };
        return Some((a.strip_prefix("a/")?.to_string(), b.strip_prefix("b/")?.to_string()));
    }
    // Unquoted paths may contain spaces; with identical paths the header is
    // symmetric around its midpoint.
    let bytes = rest.as_bytes();
    if bytes.len() % 2 == 1 {
        let mid = bytes.len() / 2;
        if bytes[mid] == b' ' {
            let (a, b) = (&rest[..mid], &rest[mid + 1..]);
            if let (Some(a), Some(b)) = (a.strip_prefix("a/"), b.strip_prefix("b/")) {
                if a == b {
                    return Some((a.to_string(), b.to_string()));
                }
            }
        }
    }
    let idx = rest.find(" b/")?;
    Some((rest[..idx].strip_prefix("a/")?.to_string(), rest[idx + 3..].to_string()))
}

fn take_quoted(s: &str) -> Option<(String, &str)> {
    let body = s.strip_prefix('"')?;
    let mut escaped = false;
    for (i, c) in body.char_indices() {
        match (escaped, c) {
            (true, _) => escaped = false,
            (false, '\\') => escaped = true,
            (false, '"') => return Some((unquote(&s[..i + 2]), &body[i + 1..])),
            _ => {}
        }
    }
    None
}

/// Decodes git's C-style quoted path form; unquoted input is returned as-is.
pub fn unquote(s: &str) -> String {
    let Some(inner) = s.strip_prefix('"').and_then(|r| r.strip_suffix('"')) else {
        return s.to_string();
    };
    let mut out = Vec::with_capacity(inner.len());
    let bytes = inner.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' || i + 1 >= bytes.len() {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        let c = bytes[i + 1];
        i += 2;
        match c {
            b'n' => out.push(b'\n'),
            b't' => out.push(b'\t'),
            b'"' => out.push(b'"'),
            b'\\' => out.push(b'\\'),
            b'a' => out.push(7),
            b'b' => out.push(8),
            b'f' => out.push(12),
            b'r' => out.push(b'\r'),
            b'v' => out.push(11),
            b'0'..=b'7' => {
                let mut v = u32::from(c - b'0');
                for _ in 0..2 {
                    if i < bytes.len() && (b'0'..=b'7').contains(&bytes[i]) {
                        v = v * 8 + u32::from(bytes[i] - b'0');
                        i += 1;
                    }
                }
                out.push(v as u8);
            }
            other => out.push(other),
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_FILES: &str = "\
diff --git a/src/m.py b/src/m.py
index 1111111..2222222 100644
--- a/src/m.py
+++ b/src/m.py
@@ -1,2 +1,3 @@
 def a():
     return 1
+X = 2
diff --git a/tests/test_m.py b/tests/test_m.py
new file mode 100644
index 0000000..3333333
--- /dev/null
+++ b/tests/test_m.py
@@ -0,0 +1,2 @@
+def test_new():
+    assert True
";

    fn rules() -> PathRules {
        PathRules::new(&["tests/**", "test_*"]).unwrap()
    }

    #[test]
    fn parses_sections_and_line_numbers() {
        let p = Patch::parse(TWO_FILES).unwrap();
        assert_eq!(p.files.len(), 2);
        let m = &p.files[0];
        assert_eq!(m.path(), "src/m.py");
        assert_eq!(m.added_lines().collect::<Vec<_>>(), vec![(3, "X = 2")]);
        let t = &p.files[1];
        assert!(t.is_created());
        assert_eq!(t.path(), "tests/test_m.py");
        assert_eq!(p.to_text(), TWO_FILES);
    }

    #[test]
    fn split_routes_by_path() {
        let (fix, test) = split_patch(TWO_FILES, &rules()).unwrap();
        assert_eq!(Patch::parse(&fix).unwrap().file_set(), BTreeSet::from(["src/m.py".to_string()]));
        assert_eq!(
            Patch::parse(&test).unwrap().file_set(),
            BTreeSet::from(["tests/test_m.py".to_string()])
        );
        assert_eq!(format!("{fix}{test}"), TWO_FILES);
    }

    #[test]
    fn all_test_diff_goes_to_test_side() {
        let only_test = &TWO_FILES[TWO_FILES.find("diff --git a/tests").unwrap()..];
        let (fix, test) = split_patch(only_test, &rules()).unwrap();
        assert!(fix.is_empty());
        assert_eq!(test, only_test);
    }

    #[test]
    fn unmatched_path_defaults_to_fix() {
        let diff = "--- a/setup.py\n+++ b/setup.py\n@@ -1 +1 @@\n-a\n+b\n";
        let (fix, test) = split_patch(diff, &rules()).unwrap();
        assert_eq!(fix, diff);
        assert!(test.is_empty());
    }

    #[test]
    fn bad_hunk_header_is_malformed() {
        let diff = "--- a/x\n+++ b/x\n@@ -1,zz +1 @@\n-a\n+b\n";
        assert!(matches!(Patch::parse(diff), Err(Error::MalformedDiff { line: 3, .. })));
        let truncated = "--- a/x\n+++ b/x\n@@ -1,3 +1,3 @@\n a\n";
        assert!(matches!(Patch::parse(truncated), Err(Error::MalformedDiff { .. })));
    }

    #[test]
    fn old_side_numbers_for_context_and_removed() {
        let diff = "--- a/f\n+++ b/f\n@@ -10,3 +10,3 @@\n keep\n-old\n+new\n keep2\n";
        let p = Patch::parse(diff).unwrap();
        let old: Vec<_> = p.files[0].hunks[0].old_side().collect();
        assert_eq!(old, vec![(10, "keep"), (11, "old"), (12, "keep2")]);
        assert_eq!(p.files[0].removed_lines().collect::<Vec<_>>(), vec![(11, "old")]);
    }

    #[test]
    fn no_newline_marker_and_binary_sections() {
        let diff = "\
diff --git a/a.txt b/a.txt
--- a/a.txt
+++ b/a.txt
@@ -1 +1 @@
-x
\\ No newline at end of file
+y
\\ No newline at end of file
diff --git a/img.png b/img.png
index 1..2 100644
Binary files a/img.png and b/img.png differ
";
        let p = Patch::parse(diff).unwrap();
        assert_eq!(p.files.len(), 2);
        assert!(p.files[1].binary);
        assert_eq!(p.to_text(), diff);
    }

    #[test]
    fn quoted_and_spaced_paths() {
        assert_eq!(unquote("\"caf\\303\\251.py\""), "café.py");
        let diff = "diff --git a/my file.py b/my file.py\ndeleted file mode 100644\n--- a/my file.py\n+++ /dev/null\n@@ -1 +0,0 @@\n-x\n";
        let p = Patch::parse(diff).unwrap();
        assert!(p.files[0].is_deleted());
        assert_eq!(p.files[0].path(), "my file.py");
    }
}
