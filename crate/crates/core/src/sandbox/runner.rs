//! Test-runner profiles and report parsing.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{runner_env, ExecRequest, Sandbox};
use crate::error::{Error, Result};
use crate::types::{TestId, TestStatus};

pub const DEFAULT_STDERR_CAP: usize = 16 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test_id: TestId,
    pub status: TestStatus,
    pub duration: f64,
    #[serde(default)]
    pub stderr_excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    /// One outcome per requested id, in request order.
    pub outcomes: Vec<TestOutcome>,
    /// Ids the runner actually reported on.
    pub collected: usize,
    /// Requested ids the runner never reported (recorded as errored).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub uncollected: Vec<TestId>,
    pub exit_code: Option<i32>,
    #[serde(default)]
    pub timed_out: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_log_path: Option<PathBuf>,
}

impl SuiteReport {
    pub fn status_map(&self) -> BTreeMap<TestId, TestStatus> {
        self.outcomes.iter().map(|o| (o.test_id.clone(), o.status)).collect()
    }

    pub fn status_of(&self, id: &TestId) -> Option<TestStatus> {
        self.outcomes.iter().find(|o| &o.test_id == id).map(|o| o.status)
    }

    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.status.is_pass())
    }

    /// Excerpts of every non-passing test, in report order, bounded by `cap` bytes.
    pub fn failure_feedback(&self, cap: usize) -> String {
        let mut out = String::new();
        for o in self.outcomes.iter().filter(|o| !o.status.is_pass()) {
            let block = format!("{} {}\n{}\n", o.status, o.test_id, o.stderr_excerpt.trim_end());
            out.push_str(&block);
            if out.len() >= cap {
                return truncate(&out, cap);
            }
        }
        out
    }
}

/// How to invoke the runner and read its report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerProfile {
    /// argv template. `{env_path}`, `{select}`, `{report}` and
    /// `{per_test_timeout}` are substituted; a lone `{files}` or `{ids}`
    /// expands to one argument per test file / test id.
    #[serde(default = "default_template")]
    pub command_template: Vec<String>,
    #[serde(default = "default_format")]
    pub report_format: String,
    #[serde(default = "default_env")]
    pub env_path: String,
    #[serde(default = "default_per_test")]
    pub per_test_timeout_s: f64,
    #[serde(default = "default_run_timeout")]
    pub run_timeout_s: u64,
    #[serde(default = "default_cap")]
    pub stderr_cap: usize,
}

fn default_template() -> Vec<String> {
    [
        "{env_path}",
        "-m",
        "pytest",
        "-q",
        "-p",
        "chainforge_pytest",
        "-p",
        "no:cacheprovider",
        "--rootdir=.",
        "--continue-on-collection-errors",
        "--cf-select",
        "{select}",
        "--cf-report",
        "{report}",
        "--cf-timeout",
        "{per_test_timeout}",
        "{files}",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}
fn default_format() -> String {
    "cf-jsonl".into()
}
fn default_env() -> String {
    "python3".into()
}
fn default_per_test() -> f64 {
    120.0
}
fn default_run_timeout() -> u64 {
    1200
}
fn default_cap() -> usize {
    DEFAULT_STDERR_CAP
}

impl Default for RunnerProfile {
    fn default() -> Self {
        Self {
            command_template: default_template(),
            report_format: default_format(),
            env_path: default_env(),
            per_test_timeout_s: default_per_test(),
            run_timeout_s: default_run_timeout(),
            stderr_cap: default_cap(),
        }
    }
}

impl RunnerProfile {
    pub fn with_env_path(mut self, env_path: &str) -> Self {
        self.env_path = env_path.to_string();
        self
    }

    fn render(&self, select: &str, report: &str, files: &[String], ids: &[TestId]) -> Vec<String> {
        let mut argv = Vec::new();
        for t in &self.command_template {
            match t.as_str() {
                "{files}" => argv.extend(files.iter().cloned()),
                "{ids}" => argv.extend(ids.iter().map(|i| i.0.clone())),
                _ => argv.push(
                    t.replace("{env_path}", &self.env_path)
                        .replace("{select}", select)
                        .replace("{report}", report)
                        .replace("{per_test_timeout}", &self.per_test_timeout_s.to_string()),
                ),
            }
        }
        argv
    }
}

/// One test result as reported by the runner.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutcome {
    pub test_id: TestId,
    pub status: TestStatus,
    pub duration: f64,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedReport {
    pub outcomes: Vec<ParsedOutcome>,
    /// (file or node id, error text) for collection failures.
    pub collect_errors: Vec<(String, String)>,
}

pub trait ReportFormat: Send + Sync {
    fn name(&self) -> &'static str;
    fn parse(&self, raw: &[u8]) -> Result<ParsedReport>;
}

/// Line-delimited JSON written by the bundled pytest plugin.
#[derive(Debug, Default)]
pub struct JsonLinesFormat;

#[derive(Deserialize)]
struct JsonLine {
    #[serde(default)]
    nodeid: Option<String>,
    #[serde(default)]
    outcome: Option<String>,
    #[serde(default)]
    duration: f64,
    #[serde(default)]
    longrepr: String,
    #[serde(default)]
    collect_error: Option<String>,
}

impl ReportFormat for JsonLinesFormat {
    fn name(&self) -> &'static str {
        "cf-jsonl"
    }

    fn parse(&self, raw: &[u8]) -> Result<ParsedReport> {
        let text = String::from_utf8_lossy(raw);
        let mut report = ParsedReport::default();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: JsonLine = match serde_json::from_str(line) {
                Ok(e) => e,
                // A run killed mid-write leaves a torn last line.
                Err(_) if n + 1 == text.lines().count() => break,
                Err(e) => return Err(Error::invalid("runner report", format!("line {}: {e}", n + 1))),
            };
            if let Some(path) = entry.collect_error {
                report.collect_errors.push((path, entry.longrepr));
                continue;
            }
            let (Some(nodeid), Some(outcome)) = (entry.nodeid, entry.outcome) else {
                return Err(Error::invalid("runner report", format!("line {}: missing nodeid/outcome", n + 1)));
            };
            report.outcomes.push(ParsedOutcome {
                test_id: TestId::new(nodeid),
                status: parse_status(&outcome)?,
                duration: entry.duration.max(0.0),
                text: entry.longrepr,
            });
        }
        Ok(report)
    }
}

fn parse_status(s: &str) -> Result<TestStatus> {
    Ok(match s {
        "passed" => TestStatus::Passed,
        "failed" => TestStatus::Failed,
        "errored" | "error" => TestStatus::Errored,
        "skipped" => TestStatus::Skipped,
        other => return Err(Error::invalid("runner report", format!("unknown outcome {other:?}"))),
    })
}

/// JUnit XML as written by `pytest --junitxml`. Node ids are rebuilt from
/// `classname` (dotted module path plus optional class) and `name`.
#[derive(Debug, Default)]
pub struct JunitXmlFormat;

impl ReportFormat for JunitXmlFormat {
    fn name(&self) -> &'static str {
        "junit-xml"
    }

    fn parse(&self, raw: &[u8]) -> Result<ParsedReport> {
        use quick_xml::events::Event;
        let mut reader = quick_xml::Reader::from_reader(raw);
        let mut buf = Vec::new();
        let mut report = ParsedReport::default();
        let mut current: Option<ParsedOutcome> = None;
        let mut in_detail = false;
        let bad = |e: String| Error::invalid("junit report", e);
        loop {
            match reader.read_event_into(&mut buf).map_err(|e| bad(e.to_string()))? {
                Event::Eof => break,
                ev @ (Event::Start(_) | Event::Empty(_)) if is_testcase(&ev) => {
                    let (Event::Start(e) | Event::Empty(e)) = &ev else { unreachable!() };
                    let mut classname = String::new();
                    let mut name = String::new();
                    let mut time = 0.0;
                    for attr in e.attributes().flatten() {
                        let value = attr.unescape_value().map_err(|e| bad(e.to_string()))?.to_string();
                        match attr.key.as_ref() {
                            b"classname" => classname = value,
                            b"name" => name = value,
                            b"time" => time = value.parse().unwrap_or(0.0),
                            _ => {}
                        }
                    }
                    let outcome = ParsedOutcome {
                        test_id: junit_node_id(&classname, &name),
                        status: TestStatus::Passed,
                        duration: time,
                        text: String::new(),
                    };
                    if let Some(prev) = current.take() {
                        report.outcomes.push(prev);
                    }
                    if matches!(ev, Event::Empty(_)) {
                        report.outcomes.push(outcome);
                    } else {
                        current = Some(outcome);
                    }
                }
                Event::Start(e) | Event::Empty(e) => {
                    let status = match e.name().as_ref() {
                        b"failure" => Some(TestStatus::Failed),
                        b"error" => Some(TestStatus::Errored),
                        b"skipped" => Some(TestStatus::Skipped),
                        b"system-err" => None,
                        _ => {
                            in_detail = false;
                            continue;
                        }
                    };
                    in_detail = true;
                    if let (Some(c), Some(s)) = (current.as_mut(), status) {
                        if c.status != TestStatus::Errored {
                            c.status = s;
                        }
                        for attr in e.attributes().flatten() {
                            if attr.key.as_ref() == b"message" {
                                c.text.push_str(&attr.unescape_value().unwrap_or_default());
                                c.text.push('\n');
                            }
                        }
                    }
                }
                Event::Text(t) if in_detail => {
                    if let Some(c) = current.as_mut() {
                        c.text.push_str(&t.unescape().unwrap_or_default());
                    }
                }
                Event::End(e) if e.name().as_ref() == b"testcase" => {
                    if let Some(c) = current.take() {
                        report.outcomes.push(c);
                    }
                    in_detail = false;
                }
                Event::End(_) => in_detail = false,
                _ => {}
            }
            buf.clear();
        }
        if let Some(c) = current {
            report.outcomes.push(c);
        }
        Ok(report)
    }
}

fn is_testcase(ev: &quick_xml::events::Event<'_>) -> bool {
    use quick_xml::events::Event;
    matches!(ev, Event::Start(e) | Event::Empty(e) if e.name().as_ref() == b"testcase")
}

fn junit_node_id(classname: &str, name: &str) -> TestId {
    let parts: Vec<&str> = classname.split('.').collect();
    // Module segments are lowercase by convention; a capitalized tail is a class.
    let split = parts.iter().rposition(|p| !p.chars().next().is_some_and(|c| c.is_uppercase())).map_or(0, |i| i + 1);
    let file = format!("{}.py", parts[..split].join("/"));
    let mut id = file;
    for class in &parts[split..] {
        id.push_str("::");
        id.push_str(class);
    }
    id.push_str("::");
    id.push_str(name);
    TestId::new(id)
}

#[derive(Clone)]
pub struct FormatRegistry {
    formats: HashMap<&'static str, Arc<dyn ReportFormat>>,
}

impl Default for FormatRegistry {
    fn default() -> Self {
        let mut r = Self { formats: HashMap::new() };
        r.register(Arc::new(JsonLinesFormat));
        r.register(Arc::new(JunitXmlFormat));
        r
    }
}

impl FormatRegistry {
    pub fn register(&mut self, format: Arc<dyn ReportFormat>) {
        self.formats.insert(format.name(), format);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ReportFormat>> {
        self.formats.get(name).cloned().ok_or_else(|| {
            let mut names: Vec<&str> = self.formats.keys().copied().collect();
            names.sort();
            Error::UnknownStrategy { kind: "report format", name: name.to_string(), available: names.join(", ") }
        })
    }
}

pub fn truncate(s: &str, cap: usize) -> String {
    if s.len() <= cap {
        return s.to_string();
    }
    let mut end = cap;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}\n[truncated]", &s[..end])
}

/// Accounts every requested id exactly once, in request order.
pub fn assemble(
    suite: &[TestId],
    parsed: &ParsedReport,
    exit_code: Option<i32>,
    timed_out: bool,
    crash: Option<String>,
    cap: usize,
) -> SuiteReport {
    let by_id: HashMap<&TestId, &ParsedOutcome> = parsed.outcomes.iter().map(|o| (&o.test_id, o)).collect();
    let mut outcomes = Vec::with_capacity(suite.len());
    let mut uncollected = Vec::new();
    let mut collected = 0;
    for id in suite {
        match by_id.get(id) {
            Some(o) => {
                collected += 1;
                outcomes.push(TestOutcome {
                    test_id: id.clone(),
                    status: o.status,
                    duration: o.duration,
                    stderr_excerpt: truncate(&o.text, cap),
                });
            }
            None => {
                let file = id.file();
                let reason = parsed
                    .collect_errors
                    .iter()
                    .find(|(path, _)| path == file || path.starts_with(&format!("{file}::")))
                    .map(|(_, text)| text.clone())
                    .or_else(|| crash.clone())
                    .unwrap_or_else(|| {
                        if timed_out {
                            "test run timed out before this test finished".to_string()
                        } else {
                            "test id was not collected by the runner".to_string()
                        }
                    });
                uncollected.push(id.clone());
                outcomes.push(TestOutcome {
                    test_id: id.clone(),
                    status: TestStatus::Errored,
                    duration: 0.0,
                    stderr_excerpt: truncate(&reason, cap),
                });
            }
        }
    }
    SuiteReport { outcomes, collected, uncollected, exit_code, timed_out, crash, raw_log_path: None }
}

pub(crate) fn run_suite(
    sb: &Sandbox,
    suite: &[TestId],
    profile: &RunnerProfile,
    log_dir: Option<&Path>,
    run_no: usize,
) -> Result<SuiteReport> {
    if suite.is_empty() {
        return Err(Error::invalid("test suite", "suite must be non-empty"));
    }
    let format = FormatRegistry::default().get(&profile.report_format)?;
    let scratch = sb.handle().private_root.join(format!("run-{run_no}"));
    let select = scratch.join("select.txt");
    let report = scratch.join("report");
    let ids_text: String = suite.iter().map(|i| format!("{i}\n")).collect();
    sb.write_file(&select, ids_text.as_bytes())?;
    sb.sh("rm -f \"$1\"", &[&report.to_string_lossy()])?;

    let mut files: Vec<String> = suite.iter().map(|i| i.file().to_string()).collect();
    files.sort();
    files.dedup();
    let file_args: Vec<&str> = files.iter().map(String::as_str).collect();
    let existing = sb.sh("for f; do [ -f \"$f\" ] && printf '%s\\n' \"$f\"; done; true", &file_args)?;
    let existing: Vec<String> = String::from_utf8_lossy(&existing.stdout).lines().map(str::to_string).collect();

    let (exit_code, timed_out, stdout, stderr, raw) = if existing.is_empty() {
        (None, false, Vec::new(), b"no requested test file exists in the workspace".to_vec(), Vec::new())
    } else {
        let argv = profile.render(&select.to_string_lossy(), &report.to_string_lossy(), &existing, suite);
        let mut req = ExecRequest { argv, ..Default::default() };
        for (k, v) in runner_env(&sb.harness_dir()) {
            req.env.push((k, v));
        }
        req.timeout = Some(Duration::from_secs(profile.run_timeout_s.min(sb.spec().timeout_per_test_run).max(1)));
        req.offline = true;
        let out = sb.exec(req)?;
        let raw = sb.read_file(&report)?.unwrap_or_default();
        (out.exit_code, out.timed_out, out.stdout, out.stderr, raw)
    };

    let parsed = format.parse(&raw)?;
    // pytest: 0 all passed, 1 some failed, 5 nothing collected.
    let crash = match exit_code {
        _ if timed_out => None,
        Some(0) | Some(1) | Some(5) => None,
        _ if parsed.outcomes.is_empty() => Some(format!(
            "runner exited with {:?} and no results:\n{}",
            exit_code,
            truncate(&String::from_utf8_lossy(&stderr), profile.stderr_cap)
        )),
        _ => None,
    };
    let mut assembled = assemble(suite, &parsed, exit_code, timed_out, crash, profile.stderr_cap);
    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, data) in [("stdout", &stdout), ("stderr", &stderr), ("report", &raw)] {
            let p = dir.join(name);
            std::fs::write(&p, data).map_err(|e| Error::io(&p, e))?;
        }
        assembled.raw_log_path = Some(dir.to_path_buf());
    }
    Ok(assembled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<TestId> {
        v.iter().map(|s| TestId::from(*s)).collect()
    }

    #[test]
    fn template_renders_list_slots() {
        let p = RunnerProfile::default().with_env_path("/venv/bin/python");
        let argv = p.render("/s", "/r", &["tests/a.py".into(), "tests/b.py".into()], &ids(&["x"]));
        assert_eq!(argv[0], "/venv/bin/python");
        assert!(argv.windows(2).any(|w| w == ["--cf-select", "/s"]));
        assert_eq!(&argv[argv.len() - 2..], ["tests/a.py", "tests/b.py"]);
        assert!(argv.contains(&"120".to_string()));
    }

    #[test]
    fn jsonl_parse_and_torn_tail() {
        let raw = concat!(
            "{\"collect_error\": \"tests/test_b.py\", \"longrepr\": \"ImportError: boom\"}\n",
            "{\"nodeid\": \"tests/test_a.py::test_x\", \"outcome\": \"passed\", \"duration\": 0.01, \"longrepr\": \"\"}\n",
            "{\"nodeid\": \"tests/test_a.py::test_y\", \"outc"
        );
        let r = JsonLinesFormat.parse(raw.as_bytes()).unwrap();
        assert_eq!(r.outcomes.len(), 1);
        assert_eq!(r.collect_errors[0].0, "tests/test_b.py");
        assert!(JsonLinesFormat.parse(b"{\"nodeid\": \"a\", \"outcome\": \"weird\"}\n").is_err());
    }

    #[test]
    fn assemble_accounts_every_id_once() {
        let parsed = ParsedReport {
            outcomes: vec![ParsedOutcome {
                test_id: "tests/test_a.py::test_x".into(),
                status: TestStatus::Failed,
                duration: 0.5,
                text: "x".repeat(100),
            }],
            collect_errors: vec![("tests/test_b.py".into(), "NoModule".into())],
        };
        let suite = ids(&["tests/test_b.py::test_z", "tests/test_a.py::test_x", "tests/test_c.py::test_q"]);
        let r = assemble(&suite, &parsed, Some(1), false, None, 10);
        assert_eq!(r.outcomes.len(), 3);
        assert_eq!(r.collected, 1);
        assert_eq!(r.outcomes[0].status, TestStatus::Errored);
        assert_eq!(r.outcomes[0].stderr_excerpt, "NoModule");
        assert!(r.outcomes[1].stderr_excerpt.starts_with("xxxxxxxxxx\n[truncated]"));
        assert_eq!(r.uncollected.len(), 2);
        assert!(r.outcomes[2].stderr_excerpt.starts_with("test id wa"));
    }

    #[test]
    fn junit_parse_rebuilds_node_ids() {
        let xml = r#"<?xml version="1.0"?><testsuites><testsuite>
<testcase classname="tests.test_core" name="test_add" time="0.001"/>
<testcase classname="tests.test_core.TestDiv" name="test_zero" time="0.002"><failure message="assert 1 == 2">trace</failure></testcase>
<testcase classname="tests.test_core" name="test_skip" time="0"><skipped message="later"/></testcase>
</testsuite></testsuites>"#;
        let r = JunitXmlFormat.parse(xml.as_bytes()).unwrap();
        let got: Vec<(String, TestStatus)> = r.outcomes.iter().map(|o| (o.test_id.0.clone(), o.status)).collect();
        assert_eq!(
            got,
            vec![
                ("tests/test_core.py::test_add".to_string(), TestStatus::Passed),
                ("tests/test_core.py::TestDiv::test_zero".to_string(), TestStatus::Failed),
                ("tests/test_core.py::test_skip".to_string(), TestStatus::Skipped),
            ]
        );
        assert!(r.outcomes[1].text.contains("assert 1 == 2"));
    }

    #[test]
    fn feedback_lists_failures_only() {
        let suite = ids(&["t.py::a", "t.py::b"]);
        let parsed = ParsedReport {
            outcomes: vec![
                ParsedOutcome { test_id: "t.py::a".into(), status: TestStatus::Passed, duration: 0.0, text: String::new() },
                ParsedOutcome { test_id: "t.py::b".into(), status: TestStatus::Failed, duration: 0.0, text: "boom".into() },
            ],
            collect_errors: vec![],
        };
        let r = assemble(&suite, &parsed, Some(1), false, None, 1024);
        assert_eq!(r.failure_feedback(1024), "failed t.py::b\nboom\n");
    }
}
