//! Logical-line lexer for Python-style sources.
//!
//! Produces one [`LogicalLine`] per statement: bracketed and backslash
//! continuations are joined, comments dropped, and string literal bodies
//! blanked so keyword scans never fire inside strings. This is deliberately
//! not a parser; it recovers exactly the indentation structure that the
//! symbol extractor and the complexity analyzer need.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalLine {
    /// First physical line, 1-based.
    pub start: u32,
    /// Last physical line, 1-based inclusive.
    pub end: u32,
    pub indent: usize,
    /// Code with comments removed and string bodies replaced by `""`.
    pub code: String,
    /// Original physical lines, newline-joined, trailing whitespace trimmed.
    pub text: String,
    /// Set when the statement is a lone string literal (docstring candidate).
    pub string_value: Option<String>,
}

impl LogicalLine {
    /// Leading keyword of the statement, if the statement starts with one.
    pub fn keyword(&self) -> Option<&str> {
        let word = self.code.trim_start().split(|c: char| !(c.is_alphanumeric() || c == '_')).next()?;
        KEYWORDS.contains(&word).then_some(word)
    }

    /// Whether the statement ends with `:` and so opens an indented block.
    pub fn opens_block(&self) -> bool {
        self.code.trim_end().ends_with(':')
    }
}

const KEYWORDS: &[&str] = &[
    "def", "class", "async", "if", "elif", "else", "for", "while", "try", "except", "finally", "with",
    "match", "case", "return", "lambda", "pass", "break", "continue", "raise", "import", "from", "yield",
    "global", "nonlocal", "assert", "del",
];

pub fn logical_lines(src: &str) -> Vec<LogicalLine> {
    let mut out = Vec::new();
    let physical: Vec<&str> = src.lines().collect();
    let mut i = 0usize;
    // Lexer state that survives across physical lines.
    let mut in_string: Option<StringState> = None;
    while i < physical.len() {
        let first = physical[i];
        let trimmed = first.trim_start();
        if in_string.is_none() && (trimmed.is_empty() || trimmed.starts_with('#')) {
            i += 1;
            continue;
        }
        let start = i;
        let indent = indent_width(first);
        let mut code = String::new();
        let mut depth: i32 = 0;
        let mut literal = String::new();
        let mut literal_count = 0usize;
        let mut other_tokens = false;
        loop {
            let line = physical[i];
            let mut chars = line.char_indices().peekable();
            let mut continued = false;
            while let Some((pos, c)) = chars.next() {
                if let Some(state) = in_string.as_mut() {
                    if c == '\\' && !state.raw {
                        if let Some((_, n)) = chars.next() {
                            literal.push('\\');
                            literal.push(n);
                        } else if state.triple {
                            literal.push('\n');
                        }
                        continue;
                    }
                    if c == state.quote {
                        if state.triple {
                            if line[pos..].starts_with(&state.quote.to_string().repeat(3)) {
                                chars.next();
                                chars.next();
                                in_string = None;
                                code.push('"');
                            } else {
                                literal.push(c);
                            }
                        } else {
                            in_string = None;
                            code.push('"');
                        }
                    } else {
                        literal.push(c);
                    }
                    continue;
                }
                match c {
                    '#' => break,
                    '\'' | '"' => {
                        let triple = line[pos..].starts_with(&c.to_string().repeat(3));
                        if triple {
                            chars.next();
                            chars.next();
                        }
                        let raw = prefix_is_raw(&code);
                        strip_string_prefix(&mut code);
                        code.push('"');
                        literal_count += 1;
                        literal.clear();
                        in_string = Some(StringState { quote: c, triple, raw });
                    }
                    '(' | '[' | '{' => {
                        depth += 1;
                        code.push(c);
                        other_tokens = true;
                    }
                    ')' | ']' | '}' => {
                        depth -= 1;
                        code.push(c);
                        other_tokens = true;
                    }
                    '\\' if chars.peek().is_none() => continued = true,
                    _ => {
                        if !c.is_whitespace() {
                            other_tokens = true;
                        }
                        code.push(c);
                    }
                }
            }
            if let Some(state) = &in_string {
                if state.triple {
                    literal.push('\n');
                    code.push(' ');
                    i += 1;
                    if i >= physical.len() {
                        break;
                    }
                    continue;
                }
                // Unterminated single-quoted string: close it at end of line.
                in_string = None;
                code.push('"');
            }
            i += 1;
            if (depth > 0 || continued) && i < physical.len() {
                code.push(' ');
                continue;
            }
            break;
        }
        let end = i.min(physical.len());
        let text = physical[start..end].iter().map(|l| l.trim_end()).collect::<Vec<_>>().join("\n");
        let code = normalize_ws(&code);
        let string_value = (literal_count == 1 && !other_tokens).then(|| literal.trim().to_string());
        if code.is_empty() {
            continue;
        }
        out.push(LogicalLine {
            start: start as u32 + 1,
            end: end as u32,
            indent,
            code,
            text,
            string_value,
        });
    }
    out
}

/// Index one past the last line of the block opened by `lines[at]`.
pub fn block_end(lines: &[LogicalLine], at: usize) -> usize {
    let indent = lines[at].indent;
    let mut j = at + 1;
    while j < lines.len() && lines[j].indent > indent {
        j += 1;
    }
    j
}

#[derive(Debug, Clone, Copy)]
struct StringState {
    quote: char,
    triple: bool,
    raw: bool,
}

fn indent_width(line: &str) -> usize {
    let mut w = 0;
    for c in line.chars() {
        match c {
            ' ' => w += 1,
            '\t' => w = (w / 8 + 1) * 8,
            _ => break,
        }
    }
    w
}

fn prefix_is_raw(code: &str) -> bool {
    let tail: String = code.chars().rev().take_while(|c| c.is_ascii_alphabetic()).collect();
    tail.len() <= 2 && tail.chars().any(|c| c == 'r' || c == 'R')
}

fn strip_string_prefix(code: &mut String) {
    let tail_len = code.chars().rev().take_while(|c| c.is_ascii_alphabetic()).count();
    if tail_len > 0 && tail_len <= 2 {
        let tail: String = code.chars().rev().take(tail_len).collect();
        let is_prefix = tail.chars().all(|c| matches!(c.to_ascii_lowercase(), 'r' | 'b' | 'u' | 'f'));
        let preceded_by_ident = code
            .chars()
            .rev()
            .nth(tail_len)
            .is_some_and(|c| c.is_alphanumeric() || c == '_');
        if is_prefix && !preceded_by_ident {
            for _ in 0..tail_len {
                code.pop();
            }
        }
    }
}

fn normalize_ws(code: &str) -> String {
    code.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits code into identifier-ish tokens and single punctuation characters.
pub fn tokens(code: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in code.char_indices() {
        let ident = c.is_alphanumeric() || c == '_';
        match (start, ident) {
            (None, true) => start = Some(i),
            (Some(s), false) => {
                out.push(&code[s..i]);
                start = None;
            }
            _ => {}
        }
        if !ident && !c.is_whitespace() {
            out.push(&code[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&code[s..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joins_bracket_continuations_and_drops_comments() {
        let src = "x = foo(1,\n        2)  # trailing\n# only comment\n\ny = 3\n";
        let lines = logical_lines(src);
        assert_eq!(lines.len(), 2);
        assert_eq!((lines[0].start, lines[0].end), (1, 2));
        assert_eq!(lines[0].code, "x = foo(1, 2)");
        assert_eq!(lines[1].start, 5);
    }

    #[test]
    fn blanks_strings_and_captures_docstrings() {
        let src = "def f():\n    \"\"\"Doc line.\n\n    More.\"\"\"\n    return 'if x else y'\n";
        let lines = logical_lines(src);
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].string_value.as_deref(), Some("Doc line.\n\n    More."));
        assert_eq!((lines[1].start, lines[1].end), (2, 4));
        assert_eq!(lines[2].code, "return \"\"");
        assert_eq!(lines[2].keyword(), Some("return"));
    }

    #[test]
    fn string_prefixes_and_hash_in_string() {
        let lines = logical_lines("s = rb'a#b' + f\"{x}\"\n");
        assert_eq!(lines[0].code, "s = \"\" + \"\"");
        assert!(lines[0].string_value.is_none());
    }

    #[test]
    fn block_structure() {
        let src = "class C:\n    def m(self):\n        pass\n\n    def n(self):\n        return 1\nz = 1\n";
        let lines = logical_lines(src);
        assert!(lines[0].opens_block());
        assert_eq!(block_end(&lines, 0), 5);
        assert_eq!(block_end(&lines, 1), 3);
        assert_eq!(lines[4].indent, 8);
    }

    #[test]
    fn backslash_continuation() {
        let lines = logical_lines("if a and \\\n   b:\n    pass\n");
        assert_eq!(lines[0].code, "if a and b:");
        assert_eq!(lines[0].end, 2);
    }

    #[test]
    fn tokenizer_splits_identifiers() {
        assert_eq!(tokens("x = Foo(a.b)"), vec!["x", "=", "Foo", "(", "a", ".", "b", ")"]);
    }
}
