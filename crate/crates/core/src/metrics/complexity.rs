//! Baseline cognitive complexity and remediation estimate for Python files.
//!
//! Structural increments (+1 plus the current nesting level) for `if`,
//! `for`, `while`, `except`, `match` and conditional expressions; flat +1 for
//! `elif`, `else` and each run of like boolean operators. Nesting grows inside
//! those structures and inside functions defined within functions.

use serde::{Deserialize, Serialize};

use crate::lang::python::{logical_lines, tokens, LogicalLine};

/// Remediation minutes per rule. Baseline scale only.
pub const RULES: &[(&str, u64)] = &[
    ("function-complexity", 10),
    ("nesting-depth", 10),
    ("too-many-parameters", 20),
    ("long-line", 1),
    ("bare-except", 5),
    ("todo-comment", 10),
];

pub const FUNCTION_COMPLEXITY_LIMIT: u64 = 15;
pub const NESTING_LIMIT: usize = 3;
pub const PARAMETER_LIMIT: usize = 7;
pub const LINE_LIMIT: usize = 120;

fn rule_cost(rule: &str) -> u64 {
    RULES.iter().find(|(r, _)| *r == rule).map(|(_, m)| *m).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub rule: String,
    pub line: u32,
    pub minutes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FileAnalysis {
    pub complexity: u64,
    pub functions: Vec<(String, u64)>,
    pub issues: Vec<Issue>,
}

impl FileAnalysis {
    pub fn sqale_minutes(&self) -> u64 {
        self.issues.iter().map(|i| i.minutes).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Frame {
    Nesting,
    Function { nested: bool, index: usize },
    Plain,
}

fn first_word(code: &str) -> &str {
    code.split(|c: char| !(c.is_alphanumeric() || c == '_')).next().unwrap_or("")
}

/// Keyword after an optional `async`.
fn statement_keyword(line: &LogicalLine) -> Option<&str> {
    let kw = line.keyword()?;
    if kw == "async" {
        let rest = line.code.trim_start().strip_prefix("async")?.trim_start();
        return Some(first_word(rest)).filter(|w| matches!(*w, "def" | "for" | "with"));
    }
    Some(kw)
}

fn boolean_sequences(toks: &[&str]) -> u64 {
    let mut count = 0;
    let mut prev: Option<&str> = None;
    for t in toks.iter().filter(|t| matches!(**t, "and" | "or")) {
        if prev != Some(*t) {
            count += 1;
        }
        prev = Some(t);
    }
    count
}

/// Conditional expressions on a line: `if` tokens paired with `else`,
/// ignoring a leading statement keyword.
fn conditional_expressions(toks: &[&str], leading: Option<&str>) -> u64 {
    let skip = usize::from(matches!(leading, Some("if" | "elif" | "else" | "while")));
    let rest = &toks[skip.min(toks.len())..];
    let ifs = rest.iter().filter(|t| **t == "if").count();
    let elses = rest.iter().filter(|t| **t == "else").count();
    ifs.min(elses) as u64
}

fn parameter_count(code: &str) -> usize {
    let Some(open) = code.find('(') else { return 0 };
    let mut depth = 0i32;
    let mut params = Vec::new();
    let mut current = String::new();
    for c in code[open + 1..].chars() {
        match c {
            '(' | '[' | '{' => {
                depth += 1;
                current.push(c);
            }
            ')' if depth == 0 => break,
            ')' | ']' | '}' => {
                depth -= 1;
                current.push(c);
            }
            ',' if depth == 0 => params.push(std::mem::take(&mut current)),
            _ => current.push(c),
        }
    }
    params.push(current);
    params
        .iter()
        .map(|p| p.split([':', '=']).next().unwrap_or("").trim())
        .filter(|p| !p.is_empty() && !matches!(*p, "self" | "cls" | "*" | "/"))
        .count()
}

fn function_name(code: &str) -> String {
    let rest = code.trim_start().trim_start_matches("async").trim_start();
    let rest = rest.strip_prefix("def").unwrap_or(rest).trim_start();
    first_word(rest).to_string()
}

/// Cognitive complexity of a source text.
pub fn cognitive_complexity(src: &str) -> u64 {
    analyze_source(src).complexity
}

pub fn analyze_source(src: &str) -> FileAnalysis {
    let lines = logical_lines(src);
    let mut out = FileAnalysis::default();
    let mut stack: Vec<(usize, Frame)> = Vec::new();

    for line in &lines {
        while stack.last().is_some_and(|(indent, _)| *indent >= line.indent) {
            stack.pop();
        }
        let nesting = stack
            .iter()
            .filter(|(_, f)| matches!(f, Frame::Nesting | Frame::Function { nested: true, .. }))
            .count();
        let owner = stack.iter().find_map(|(_, f)| match f {
            Frame::Function { index, .. } => Some(*index),
            _ => None,
        });
        let kw = statement_keyword(line);
        let toks = tokens(&line.code);

        let mut inc = boolean_sequences(&toks);
        inc += conditional_expressions(&toks, kw) * (1 + nesting as u64);
        let frame = match kw {
            Some("if" | "for" | "while" | "except" | "match") => {
                inc += 1 + nesting as u64;
                if nesting >= NESTING_LIMIT {
                    out.issues.push(Issue { rule: "nesting-depth".into(), line: line.start, minutes: rule_cost("nesting-depth") });
                }
                if kw == Some("except") && line.code.trim_start().starts_with("except:") {
                    out.issues.push(Issue { rule: "bare-except".into(), line: line.start, minutes: rule_cost("bare-except") });
                }
                Frame::Nesting
            }
            Some("elif" | "else") => {
                inc += 1;
                Frame::Nesting
            }
            Some("def") => {
                let nested = stack.iter().any(|(_, f)| matches!(f, Frame::Function { .. }));
                if parameter_count(&line.code) > PARAMETER_LIMIT {
                    out.issues.push(Issue {
                        rule: "too-many-parameters".into(),
                        line: line.start,
                        minutes: rule_cost("too-many-parameters"),
                    });
                }
                if nested {
                    Frame::Function { nested: true, index: owner.unwrap_or(0) }
                } else {
                    out.functions.push((function_name(&line.code), 0));
                    Frame::Function { nested: false, index: out.functions.len() - 1 }
                }
            }
            _ => Frame::Plain,
        };
        out.complexity += inc;
        if let Some(i) = owner {
            out.functions[i].1 += inc;
        }
        if line.opens_block() {
            stack.push((line.indent, frame));
        }
    }

    for (name, c) in &out.functions {
        if *c > FUNCTION_COMPLEXITY_LIMIT {
            let line = lines
                .iter()
                .find(|l| statement_keyword(l) == Some("def") && function_name(&l.code) == *name)
                .map_or(0, |l| l.start);
            out.issues.push(Issue {
                rule: "function-complexity".into(),
                line,
                minutes: rule_cost("function-complexity") + (c - FUNCTION_COMPLEXITY_LIMIT),
            });
        }
    }
    for (i, raw) in src.lines().enumerate() {
        if raw.chars().count() > LINE_LIMIT {
            out.issues.push(Issue { rule: "long-line".into(), line: i as u32 + 1, minutes: rule_cost("long-line") });
        }
        if let Some(pos) = raw.find('#') {
            let comment = &raw[pos..];
            if comment.contains("TODO") || comment.contains("FIXME") {
                out.issues.push(Issue { rule: "todo-comment".into(), line: i as u32 + 1, minutes: rule_cost("todo-comment") });
            }
        }
    }
    out.issues.sort_by(|a, b| (a.line, &a.rule).cmp(&(b.line, &b.rule)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_structures_accumulate() {
        let src = "def f(xs):\n    if xs:\n        for x in xs:\n            if x:\n                return x\n";
        assert_eq!(cognitive_complexity(src), 6);
    }

    #[test]
    fn flat_if_and_empty() {
        assert_eq!(cognitive_complexity("if a:\n    b()\n"), 1);
        assert_eq!(cognitive_complexity(""), 0);
        assert_eq!(analyze_source("").sqale_minutes(), 0);
    }

    #[test]
    fn else_branches_are_flat() {
        let src = "def f(a):\n    if a:\n        return 1\n    elif a > 2:\n        return 2\n    else:\n        return 3\n";
        assert_eq!(cognitive_complexity(src), 3);
    }

    #[test]
    fn boolean_runs() {
        assert_eq!(cognitive_complexity("x = a and b and c\n"), 1);
        assert_eq!(cognitive_complexity("x = a and b or c\n"), 2);
        assert_eq!(cognitive_complexity("if a and b:\n    pass\n"), 2);
    }

    #[test]
    fn strings_do_not_count() {
        assert_eq!(cognitive_complexity("x = 'if a and b else c'\n"), 0);
    }

    #[test]
    fn nested_function_adds_nesting() {
        let src = "def outer():\n    def inner():\n        if x:\n            pass\n    return inner\n";
        assert_eq!(cognitive_complexity(src), 2);
        let a = analyze_source(src);
        assert_eq!(a.functions, vec![("outer".to_string(), 2)]);
    }

    #[test]
    fn remediation_rules() {
        let src = format!(
            "def f(a, b, c, d, e, g, h, i):\n    try:\n        pass\n    except:\n        pass  # TODO tidy\nx = '{}'\n",
            "y".repeat(130)
        );
        let a = analyze_source(&src);
        let rules: Vec<&str> = a.issues.iter().map(|i| i.rule.as_str()).collect();
        assert_eq!(rules, vec!["too-many-parameters", "bare-except", "todo-comment", "long-line"]);
        assert_eq!(a.sqale_minutes(), 20 + 5 + 10 + 1);
    }
}
