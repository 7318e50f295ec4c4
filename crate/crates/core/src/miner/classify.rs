//! PR categorization: a remote LLM adapter speaking the categorization prompt
//! and a deterministic keyword classifier used as fallback.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Category, CommitId, Confidence};

const CATEGORIZE_TEMPLATE: &str = include_str!("../prompts/categorize.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub category: Category,
    pub confidence: Confidence,
    pub keywords: Vec<String>,
    #[serde(default)]
    pub explanation: String,
    #[serde(default)]
    pub reasoning: String,
}

pub trait Classifier: Send + Sync {
    fn name(&self) -> &'static str;
    fn classify(&self, commit: &CommitId, texts: &[String]) -> Result<Classification>;
}

/// Fills the categorization prompt for one commit.
pub fn categorization_prompt(commit: &CommitId, commit_text: &str) -> String {
    let categories = Category::ALL.iter().map(|c| format!("- {}", c.label())).collect::<Vec<_>>().join("\n");
    CATEGORIZE_TEMPLATE
        .replace("{commit_id}", commit.as_str())
        .replace("{commit_text}", commit_text)
        .replace("{categories}", &categories)
}

/// Outcome of [`classify_pr`], with any fallback recorded as flags.
#[derive(Debug, Clone)]
pub struct ClassifyOutcome {
    pub classification: Classification,
    pub flags: Vec<String>,
}

/// Runs `adapter`, retrying once on a schema violation, and falls back to the
/// keyword classifier when the adapter is missing or keeps failing.
pub fn classify_pr(commit: &CommitId, texts: &[String], adapter: Option<&dyn Classifier>) -> ClassifyOutcome {
    let fallback = |flag: String| ClassifyOutcome {
        classification: KeywordClassifier.classify_texts(texts),
        flags: vec![flag],
    };
    let Some(adapter) = adapter else {
        return ClassifyOutcome { classification: KeywordClassifier.classify_texts(texts), flags: vec![] };
    };
    let mut attempt = 0;
    loop {
        attempt += 1;
        match adapter.classify(commit, texts) {
            Ok(c) => return ClassifyOutcome { classification: c, flags: vec![] },
            Err(Error::SchemaViolation(msg)) if attempt < 2 => {
                tracing::warn!(%commit, %msg, "classifier schema violation, retrying");
            }
            Err(Error::SchemaViolation(msg)) => return fallback(format!("classifier-schema-violation: {msg}")),
            Err(e) => return fallback(format!("classifier-unavailable: {e}")),
        }
    }
}

/// Deterministic keyword matching over the six categories.
///
/// Each category scores one point per distinct matching cue (multi-word cues
/// score two). Ties resolve in the order Bug Fix, Feature/Enhancement,
/// Documentation, Testing, Infrastructure, Maintenance; no match at all yields
/// Maintenance with Low confidence.
#[derive(Debug, Default, Clone, Copy)]
pub struct KeywordClassifier;

const CUES: &[(Category, &[&str])] = &[
    (
        Category::BugFix,
        &["fix", "fixes", "fixed", "bug", "bugfix", "crash", "error", "regression", "incorrect", "broken", "resolve", "resolves", "wrong", "hotfix"],
    ),
    (
        Category::Feature,
        &["add new", "new feature", "add", "adds", "implement", "introduce", "support", "feature", "enhance", "improve", "performance", "speed up", "security", "allow"],
    ),
    (
        Category::Documentation,
        &["docs", "doc", "documentation", "document", "readme", "docstring", "usage guide", "changelog"],
    ),
    (Category::Testing, &["test", "tests", "testing", "coverage", "unit test", "flaky"]),
    (
        Category::Infrastructure,
        &["ci", "build", "workflow", "pipeline", "docker", "dockerfile", "setup.py", "pyproject", "release", "packaging", "config", "configuration"],
    ),
    (
        Category::Maintenance,
        &["refactor", "cleanup", "clean up", "rename", "bump", "deprecate", "lint", "chore", "update dependency", "upgrade", "simplify", "remove unused"],
    ),
];

type CueTable = Vec<(Category, Vec<(&'static str, Regex)>)>;

fn cue_regexes() -> &'static CueTable {
    static RE: OnceLock<CueTable> = OnceLock::new();
    RE.get_or_init(|| {
        CUES.iter()
            .map(|(cat, cues)| {
                let compiled = cues
                    .iter()
                    .map(|cue| {
                        let pat = format!(r"(?i)(^|[^A-Za-z0-9_]){}($|[^A-Za-z0-9_])", regex::escape(cue));
                        (*cue, Regex::new(&pat).expect("static cue regex"))
                    })
                    .collect();
                (*cat, compiled)
            })
            .collect()
    })
}

impl KeywordClassifier {
    pub fn classify_texts(&self, texts: &[String]) -> Classification {
        let text = texts.join("\n");
        let mut scored: Vec<(Category, usize, Vec<String>)> = cue_regexes()
            .iter()
            .map(|(cat, cues)| {
                let hits: Vec<String> = cues
                    .iter()
                    .filter(|(_, re)| re.is_match(&text))
                    .map(|(cue, _)| cue.to_string())
                    .collect();
                let score = hits.iter().map(|h| if h.contains(' ') { 2 } else { 1 }).sum();
                (*cat, score, hits)
            })
            .collect();
        // Stable sort keeps the tie-break order of CUES.
        scored.sort_by_key(|s| std::cmp::Reverse(s.1));
        let (category, best, keywords) = scored[0].clone();
        let runner_up = scored[1].1;
        if best == 0 {
            return Classification {
                category: Category::Maintenance,
                confidence: Confidence::Low,
                keywords: vec![],
                explanation: "no category cue matched".into(),
                reasoning: "keyword fallback".into(),
            };
        }
        let confidence = if best >= 2 && best >= 2 * runner_up {
            Confidence::High
        } else if best > runner_up {
            Confidence::Medium
        } else {
            Confidence::Low
        };
        Classification {
            category,
            confidence,
            explanation: format!("matched {} cue(s) for {}", keywords.len(), category.label()),
            reasoning: "keyword fallback".into(),
            keywords,
        }
    }
}

impl Classifier for KeywordClassifier {
    fn name(&self) -> &'static str {
        "keyword"
    }

    fn classify(&self, _commit: &CommitId, texts: &[String]) -> Result<Classification> {
        Ok(self.classify_texts(texts))
    }
}

/// Posts the filled categorization prompt to an HTTP endpoint.
///
/// Request body: `{"prompt", "commit_id", "commit_text", "categories"}`.
/// The response is either the categorization JSON object itself or any JSON
/// whose `response`/`text`/`content` string field embeds it.
#[derive(Debug, Clone)]
pub struct RemoteClassifier {
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl Classifier for RemoteClassifier {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn classify(&self, commit: &CommitId, texts: &[String]) -> Result<Classification> {
        let commit_text = texts.join("\n\n");
        let body = serde_json::json!({
            "prompt": categorization_prompt(commit, &commit_text),
            "commit_id": commit.as_str(),
            "commit_text": commit_text,
            "categories": Category::ALL.iter().map(|c| c.label()).collect::<Vec<_>>(),
        });
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut req = agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let resp = req.send_json(body).map_err(|e| Error::ClassifierUnavailable(e.to_string()))?;
        let text = resp.into_string().map_err(|e| Error::ClassifierUnavailable(e.to_string()))?;
        parse_classification(&text)
    }
}

/// Validates a categorization response against the prompt's JSON shape.
pub fn parse_classification(body: &str) -> Result<Classification> {
    let value: serde_json::Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(_) => extract_object(body)?,
    };
    let value = match value.get("category") {
        Some(_) => value,
        None => ["response", "text", "content"]
            .iter()
            .find_map(|k| value.get(*k).and_then(|v| v.as_str()))
            .map(extract_object)
            .transpose()?
            .ok_or_else(|| Error::SchemaViolation("missing `category`".into()))?,
    };
    let field = |k: &str| -> Result<&str> {
        value
            .get(k)
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::SchemaViolation(format!("`{k}` must be a string")))
    };
    let category: Category = field("category")?.parse()?;
    let confidence: Confidence = field("confidence")?.parse()?;
    let explanation = field("explanation")?.to_string();
    let reasoning = field("reasoning")?.to_string();
    let keywords = value
        .get("keywords")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::SchemaViolation("`keywords` must be an array".into()))?
        .iter()
        .map(|k| k.as_str().map(str::to_string))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::SchemaViolation("`keywords` must contain strings".into()))?;
    Ok(Classification { category, confidence, keywords, explanation, reasoning })
}

fn extract_object(text: &str) -> Result<serde_json::Value> {
    let (Some(start), Some(end)) = (text.find('{'), text.rfind('}')) else {
        return Err(Error::SchemaViolation("no JSON object in response".into()));
    };
    if end < start {
        return Err(Error::SchemaViolation("no JSON object in response".into()));
    }
    serde_json::from_str(&text[start..=end]).map_err(|e| Error::SchemaViolation(e.to_string()))
}

/// Classifier settings from the pipeline config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default = "default_classifier")]
    pub provider: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_classifier_timeout")]
    pub timeout_s: u64,
}

fn default_classifier() -> String {
    "keyword".into()
}
fn default_classifier_timeout() -> u64 {
    60
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { provider: default_classifier(), endpoint: None, token_env: None, timeout_s: default_classifier_timeout() }
    }
}

type ClassifierFactory = fn(&ClassifierConfig) -> Result<Arc<dyn Classifier>>;

/// Classifier providers by name.
#[derive(Clone)]
pub struct ClassifierRegistry {
    factories: BTreeMap<String, ClassifierFactory>,
}

impl Default for ClassifierRegistry {
    fn default() -> Self {
        let mut r = Self { factories: BTreeMap::new() };
        r.register("keyword", |_| Ok(Arc::new(KeywordClassifier)));
        r.register("remote", |cfg| {
            let endpoint = cfg.endpoint.clone().ok_or_else(|| Error::Config("remote classifier needs an endpoint".into()))?;
            let token = cfg.token_env.as_ref().and_then(|v| std::env::var(v).ok()).filter(|t| !t.is_empty());
            Ok(Arc::new(RemoteClassifier { endpoint, token, timeout: Duration::from_secs(cfg.timeout_s) }))
        });
        r
    }
}

impl ClassifierRegistry {
    pub fn register(&mut self, name: &str, factory: ClassifierFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn build(&self, cfg: &ClassifierConfig) -> Result<Arc<dyn Classifier>> {
        let f = self.factories.get(&cfg.provider).ok_or_else(|| Error::UnknownStrategy {
            kind: "classifier",
            name: cfg.provider.clone(),
            available: self.factories.keys().cloned().collect::<Vec<_>>().join(", "),
        })?;
        f(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn texts(s: &str) -> Vec<String> {
        vec![s.to_string()]
    }

    fn commit() -> CommitId {
        CommitId::parse(&"0".repeat(40)).unwrap()
    }

    #[test]
    fn keyword_examples() {
        let c = KeywordClassifier.classify_texts(&texts("fix crash when max_level set"));
        assert_eq!(c.category, Category::BugFix);
        assert!(c.keywords.contains(&"fix".to_string()));
        let c = KeywordClassifier.classify_texts(&texts("add new import-db command"));
        assert_eq!(c.category, Category::Feature);
        let c = KeywordClassifier.classify_texts(&texts("Document subtract in the usage guide"));
        assert_eq!(c.category, Category::Documentation);
        let c = KeywordClassifier.classify_texts(&texts("zzz"));
        assert_eq!((c.category, c.confidence), (Category::Maintenance, Confidence::Low));
    }

    #[test]
    fn keyword_matching_respects_word_boundaries() {
        // "prefix" must not count as "fix", "address" not as "add".
        let c = KeywordClassifier.classify_texts(&texts("prefix address"));
        assert_eq!(c.confidence, Confidence::Low);
    }

    #[test]
    fn prompt_fills_slots() {
        let p = categorization_prompt(&commit(), "hello");
        assert!(p.contains("Commit ID: 0000000000"));
        assert!(p.contains("Text Content:\nhello\nAvailable Categories:\n- Feature/Enhancement\n- Bug Fix\n"));
        assert!(p.contains("{\n    \"category\": \"Selected Category\","));
        assert!(!p.contains("{categories}"));
    }

    #[test]
    fn schema_validation() {
        let good = r#"{"category":"Bug Fix","explanation":"e","confidence":"High","reasoning":"r","keywords":["fix"]}"#;
        assert_eq!(parse_classification(good).unwrap().category, Category::BugFix);
        let wrapped = format!("Sure! ```json\n{good}\n```");
        assert_eq!(parse_classification(&wrapped).unwrap().confidence, Confidence::High);
        let nested = serde_json::json!({ "response": good }).to_string();
        assert!(parse_classification(&nested).is_ok());
        let bad = r#"{"category":"Chore","explanation":"e","confidence":"High","reasoning":"r","keywords":[]}"#;
        assert!(matches!(parse_classification(bad), Err(Error::SchemaViolation(_))));
        let bad = r#"{"category":"Bug Fix","explanation":"e","confidence":"Sure","reasoning":"r","keywords":[]}"#;
        assert!(matches!(parse_classification(bad), Err(Error::SchemaViolation(_))));
    }

    struct Flaky {
        calls: AtomicUsize,
        fail_times: usize,
        error: fn() -> Error,
    }

    impl Classifier for Flaky {
        fn name(&self) -> &'static str {
            "flaky"
        }
        fn classify(&self, _: &CommitId, _: &[String]) -> Result<Classification> {
            if self.calls.fetch_add(1, Ordering::SeqCst) < self.fail_times {
                Err((self.error)())
            } else {
                Ok(Classification {
                    category: Category::Testing,
                    confidence: Confidence::High,
                    keywords: vec![],
                    explanation: String::new(),
                    reasoning: String::new(),
                })
            }
        }
    }

    #[test]
    fn schema_violation_retries_once_then_falls_back() {
        let once = Flaky { calls: AtomicUsize::new(0), fail_times: 1, error: || Error::SchemaViolation("x".into()) };
        let out = classify_pr(&commit(), &texts("fix bug"), Some(&once));
        assert_eq!(out.classification.category, Category::Testing);
        assert!(out.flags.is_empty());

        let twice = Flaky { calls: AtomicUsize::new(0), fail_times: 2, error: || Error::SchemaViolation("x".into()) };
        let out = classify_pr(&commit(), &texts("fix bug"), Some(&twice));
        assert_eq!(out.classification.category, Category::BugFix);
        assert!(out.flags[0].starts_with("classifier-schema-violation"));
        assert_eq!(twice.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn unavailable_falls_back_immediately() {
        let down = Flaky { calls: AtomicUsize::new(0), fail_times: 9, error: || Error::ClassifierUnavailable("down".into()) };
        let out = classify_pr(&commit(), &texts("add new command"), Some(&down));
        assert_eq!(out.classification.category, Category::Feature);
        assert_eq!(down.calls.load(Ordering::SeqCst), 1);
        assert!(out.flags[0].starts_with("classifier-unavailable"));
    }
}
