//! Declaration-level change extraction.
//!
//! An extractor turns one file's source into a flat list of [`Symbol`]s with
//! line spans. [`extract_file_changes`] then intersects those spans with the
//! changed lines of a file diff on both sides to classify each symbol as
//! added, modified or deleted.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diff::FileDiff;
use crate::error::{Error, Result};
use crate::lang::python::{block_end, logical_lines, LogicalLine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Added,
    Modified,
    Deleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolKind {
    Function,
    Class,
    Method,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolChange {
    pub kind: ChangeKind,
    pub symbol_kind: SymbolKind,
    pub qualified_name: String,
    pub file: String,
    pub signature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub docstring: Option<String>,
}

impl SymbolChange {
    /// Last dotted segment of the qualified name.
    pub fn terminal_name(&self) -> &str {
        self.qualified_name.rsplit('.').next().unwrap_or(&self.qualified_name)
    }
}

/// A declaration found in one version of a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbol {
    pub qualified_name: String,
    pub kind: SymbolKind,
    /// Inclusive 1-based line span, decorators included.
    pub span: (u32, u32),
    pub signature: String,
    pub docstring: Option<String>,
}

pub trait SymbolExtractor: Send + Sync {
    fn name(&self) -> &'static str;
    /// File extensions (without the dot) this extractor understands.
    fn extensions(&self) -> &'static [&'static str];
    fn symbols(&self, path: &str, source: &str) -> Vec<Symbol>;
}

/// Extractors keyed by file extension.
#[derive(Clone)]
pub struct ExtractorRegistry {
    by_ext: HashMap<&'static str, Arc<dyn SymbolExtractor>>,
}

impl Default for ExtractorRegistry {
    fn default() -> Self {
        let mut r = Self { by_ext: HashMap::new() };
        r.register(Arc::new(PythonExtractor));
        r
    }
}

impl ExtractorRegistry {
    pub fn empty() -> Self {
        Self { by_ext: HashMap::new() }
    }

    pub fn register(&mut self, extractor: Arc<dyn SymbolExtractor>) {
        for ext in extractor.extensions() {
            self.by_ext.insert(ext, extractor.clone());
        }
    }

    pub fn for_path(&self, path: &str) -> Result<&dyn SymbolExtractor> {
        let ext = path.rsplit_once('.').map(|(_, e)| e).unwrap_or("");
        self.by_ext
            .get(ext)
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::UnsupportedLanguage { extension: ext.to_string() })
    }
}

/// Classifies the symbols of one file against the changed lines of its diff.
///
/// `before`/`after` are the file contents at the parent and head; either is
/// `None` when the file did not exist on that side.
pub fn extract_file_changes(
    extractor: &dyn SymbolExtractor,
    diff: &FileDiff,
    before: Option<&str>,
    after: Option<&str>,
) -> Vec<SymbolChange> {
    let path = diff.path();
    let before_syms = before.map(|s| extractor.symbols(path, s)).unwrap_or_default();
    let after_syms = after.map(|s| extractor.symbols(path, s)).unwrap_or_default();
    let added_lines: BTreeSet<u32> = diff.added_lines().map(|(n, _)| n).collect();
    let removed_lines: BTreeSet<u32> = diff.removed_lines().map(|(n, _)| n).collect();
    let before_by_name: BTreeMap<&str, &Symbol> =
        before_syms.iter().map(|s| (s.qualified_name.as_str(), s)).collect();
    let after_names: BTreeSet<&str> = after_syms.iter().map(|s| s.qualified_name.as_str()).collect();
    let touches = |span: (u32, u32), lines: &BTreeSet<u32>| lines.range(span.0..=span.1).next().is_some();

    let mut changes = Vec::new();
    for sym in &after_syms {
        let prior = before_by_name.get(sym.qualified_name.as_str());
        let kind = match prior {
            None => ChangeKind::Added,
            Some(p) if touches(sym.span, &added_lines) || touches(p.span, &removed_lines) => ChangeKind::Modified,
            Some(_) => continue,
        };
        changes.push(to_change(kind, sym, path));
    }
    for sym in &before_syms {
        if !after_names.contains(sym.qualified_name.as_str()) {
            changes.push(to_change(ChangeKind::Deleted, sym, path));
        }
    }
    changes
}

fn to_change(kind: ChangeKind, sym: &Symbol, file: &str) -> SymbolChange {
    SymbolChange {
        kind,
        symbol_kind: sym.kind,
        qualified_name: sym.qualified_name.clone(),
        file: file.to_string(),
        signature: sym.signature.clone(),
        docstring: sym.docstring.clone(),
    }
}

/// `def`/`class` extractor for Python-style indentation syntax.
///
/// Qualified names follow the class path (`C`, `C.m`, `C.Inner.m`); module
/// level functions are prefixed with the module name (`m.foo` for `src/m.py`)
/// so free functions of different modules stay distinguishable.
#[derive(Debug, Default, Clone, Copy)]
pub struct PythonExtractor;

impl SymbolExtractor for PythonExtractor {
    fn name(&self) -> &'static str {
        "python"
    }

    fn extensions(&self) -> &'static [&'static str] {
        &["py", "pyi"]
    }

    fn symbols(&self, path: &str, source: &str) -> Vec<Symbol> {
        let lines = logical_lines(source);
        let mut out = Vec::new();
        collect(&lines, 0, lines.len(), None, &module_name(path), &mut out);
        out
    }
}

fn module_name(path: &str) -> String {
    let mut parts: Vec<&str> = path.split('/').collect();
    let file = parts.pop().unwrap_or(path);
    let stem = file.rsplit_once('.').map_or(file, |(s, _)| s);
    if stem == "__init__" {
        parts.pop().unwrap_or(stem).to_string()
    } else {
        stem.to_string()
    }
}

fn collect(
    lines: &[LogicalLine],
    from: usize,
    to: usize,
    class_path: Option<&str>,
    module: &str,
    out: &mut Vec<Symbol>,
) {
    let Some(base_indent) = lines.get(from).map(|l| l.indent) else {
        return;
    };
    let mut i = from;
    while i < to {
        let line = &lines[i];
        if line.indent != base_indent {
            i += 1;
            continue;
        }
        let Some((is_class, name)) = declaration(&line.code) else {
            i += 1;
            continue;
        };
        let end = block_end(lines, i).min(to);
        let mut start_line = line.start;
        let mut d = i;
        while d > from && lines[d - 1].indent == base_indent && lines[d - 1].code.starts_with('@') {
            d -= 1;
            start_line = lines[d].start;
        }
        let end_line = lines[end - 1].end.max(line.end);
        let qualified = match class_path {
            Some(c) => format!("{c}.{name}"),
            None if is_class => name.to_string(),
            None => format!("{module}.{name}"),
        };
        let kind = match (is_class, class_path.is_some()) {
            (true, _) => SymbolKind::Class,
            (false, true) => SymbolKind::Method,
            (false, false) => SymbolKind::Function,
        };
        let docstring = lines
            .get(i + 1)
            .filter(|next| i + 1 < end && next.indent > base_indent)
            .and_then(|next| next.string_value.clone())
            .map(|d| dedent_docstring(&d));
        let signature = lines[d..=i].iter().map(|l| l.text.trim()).collect::<Vec<_>>().join("\n");
        out.push(Symbol {
            qualified_name: qualified.clone(),
            kind,
            span: (start_line, end_line),
            signature,
            docstring,
        });
        if is_class && i + 1 < end {
            collect(lines, i + 1, end, Some(&qualified), module, out);
        }
        i = end;
    }
}

fn declaration(code: &str) -> Option<(bool, &str)> {
    let code = code.strip_prefix("async ").unwrap_or(code);
    let (is_class, rest) = if let Some(r) = code.strip_prefix("def ") {
        (false, r)
    } else if let Some(r) = code.strip_prefix("class ") {
        (true, r)
    } else {
        return None;
    };
    let name_end = rest.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(rest.len());
    let name = &rest[..name_end];
    (!name.is_empty()).then_some((is_class, name))
}

fn dedent_docstring(doc: &str) -> String {
    let mut lines = doc.lines();
    let first = lines.next().unwrap_or("").trim().to_string();
    let rest: Vec<&str> = lines.collect();
    let indent = rest
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let mut out = vec![first];
    out.extend(rest.iter().map(|l| l.get(indent..).unwrap_or("").trim_end().to_string()));
    out.join("\n").trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Patch;

    fn names(syms: &[Symbol]) -> Vec<(&str, SymbolKind, (u32, u32))> {
        syms.iter().map(|s| (s.qualified_name.as_str(), s.kind, s.span)).collect()
    }

    #[test]
    fn python_spans_and_names() {
        let src = "\
import os

def foo(x):
    \"\"\"Foo it.\"\"\"
    return x

class C:
    @property
    def m(self):
        return 1

    class Inner:
        def k(self):
            pass
";
        let syms = PythonExtractor.symbols("src/m.py", src);
        assert_eq!(
            names(&syms),
            vec![
                ("m.foo", SymbolKind::Function, (3, 5)),
                ("C", SymbolKind::Class, (7, 14)),
                ("C.m", SymbolKind::Method, (8, 10)),
                ("C.Inner", SymbolKind::Class, (12, 14)),
                ("C.Inner.k", SymbolKind::Method, (13, 14)),
            ]
        );
        assert_eq!(syms[0].docstring.as_deref(), Some("Foo it."));
        assert_eq!(syms[0].signature, "def foo(x):");
        assert_eq!(syms[2].signature, "@property\ndef m(self):");
    }

    #[test]
    fn package_init_uses_directory_name() {
        let syms = PythonExtractor.symbols("src/calc/__init__.py", "def f():\n    pass\n");
        assert_eq!(syms[0].qualified_name, "calc.f");
    }

    fn diff_for(before: &str, after: &str) -> FileDiff {
        // Build a single-hunk diff covering the whole file, which is all the
        // line-intersection logic needs.
        let mut text = String::from("--- a/src/m.py\n+++ b/src/m.py\n");
        let b: Vec<&str> = before.lines().collect();
        let a: Vec<&str> = after.lines().collect();
        let prefix = b.iter().zip(&a).take_while(|(x, y)| x == y).count();
        let suffix = b[prefix..].iter().rev().zip(a[prefix..].iter().rev()).take_while(|(x, y)| x == y).count();
        let (bs, as_) = (&b[..b.len() - suffix], &a[..a.len() - suffix]);
        text.push_str(&format!(
            "@@ -{},{} +{},{} @@\n",
            prefix + 1,
            bs.len() - prefix,
            prefix + 1,
            as_.len() - prefix
        ));
        for l in &bs[prefix..] {
            text.push_str(&format!("-{l}\n"));
        }
        for l in &as_[prefix..] {
            text.push_str(&format!("+{l}\n"));
        }
        Patch::parse(&text).unwrap().files.remove(0)
    }

    #[test]
    fn added_function() {
        let before = "X = 1\n";
        let after = "X = 1\n\ndef foo(x):\n    return x\n";
        let changes = extract_file_changes(&PythonExtractor, &diff_for(before, after), Some(before), Some(after));
        assert_eq!(changes.len(), 1);
        assert_eq!(changes[0].kind, ChangeKind::Added);
        assert_eq!(changes[0].symbol_kind, SymbolKind::Function);
        assert_eq!(changes[0].qualified_name, "m.foo");
    }

    #[test]
    fn edited_method_marks_method_and_enclosing_class() {
        let before = "class C:\n    def m(self):\n        return 1\n\n    def n(self):\n        return 2\n";
        let after = "class C:\n    def m(self):\n        return 10\n\n    def n(self):\n        return 2\n";
        let changes = extract_file_changes(&PythonExtractor, &diff_for(before, after), Some(before), Some(after));
        let got: Vec<_> = changes.iter().map(|c| (c.kind, c.symbol_kind, c.qualified_name.as_str())).collect();
        assert_eq!(
            got,
            vec![
                (ChangeKind::Modified, SymbolKind::Class, "C"),
                (ChangeKind::Modified, SymbolKind::Method, "C.m"),
            ]
        );
    }

    #[test]
    fn deleted_class_uses_before_signature() {
        let before = "A = 1\n\nclass D(Base):\n    pass\n";
        let after = "A = 1\n";
        let changes = extract_file_changes(&PythonExtractor, &diff_for(before, after), Some(before), Some(after));
        assert_eq!(changes.len(), 1);
        assert_eq!(changes[0].kind, ChangeKind::Deleted);
        assert_eq!(changes[0].qualified_name, "D");
        assert_eq!(changes[0].signature, "class D(Base):");
    }

    #[test]
    fn unknown_extension_is_unsupported() {
        let reg = ExtractorRegistry::default();
        assert!(reg.for_path("a/b.py").is_ok());
        assert!(matches!(reg.for_path("a/b.rs"), Err(Error::UnsupportedLanguage { .. })));
    }
}
