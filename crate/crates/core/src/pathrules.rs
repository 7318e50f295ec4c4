//! Glob rules classifying repository paths as test, documentation or config.
//!
//! A pattern containing `/` is matched against the full repo-relative path;
//! a pattern without one is matched against the file name only, so `test_*`
//! picks up `pkg/sub/test_x.py` the same way `.gitignore` would.

use globset::{Glob, GlobBuilder, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PathRules {
    patterns: Vec<String>,
    full: GlobSet,
    basename: GlobSet,
}

impl PathRules {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self> {
        let mut full = GlobSetBuilder::new();
        let mut basename = GlobSetBuilder::new();
        for p in patterns {
            let p = p.as_ref();
            let glob = build_glob(p)?;
            if p.contains('/') {
                full.add(glob);
            } else {
                basename.add(glob);
            }
        }
        Ok(Self {
            patterns: patterns.iter().map(|p| p.as_ref().to_string()).collect(),
            full: full.build().map_err(|e| Error::Config(e.to_string()))?,
            basename: basename.build().map_err(|e| Error::Config(e.to_string()))?,
        })
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn matches(&self, path: &str) -> bool {
        let name = path.rsplit('/').next().unwrap_or(path);
        self.full.is_match(path) || self.basename.is_match(name)
    }
}

fn build_glob(pattern: &str) -> Result<Glob> {
    GlobBuilder::new(pattern)
        .literal_separator(true)
        .build()
        .map_err(|e| Error::Config(format!("bad glob `{pattern}`: {e}")))
}

/// The three path classes the pipeline cares about.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PathRuleConfig {
    pub test: Vec<String>,
    #[serde(default = "default_doc_rules")]
    pub doc: Vec<String>,
    #[serde(default = "default_config_rules")]
    pub config: Vec<String>,
}

impl Default for PathRuleConfig {
    fn default() -> Self {
        Self {
            test: default_test_rules(),
            doc: default_doc_rules(),
            config: default_config_rules(),
        }
    }
}

pub fn default_test_rules() -> Vec<String> {
    ["tests/**", "test/**", "test_*.py", "*_test.py", "conftest.py"]
        .map(String::from)
        .to_vec()
}

pub fn default_doc_rules() -> Vec<String> {
    ["docs/**", "doc/**", "*.md", "*.rst", "*.txt", "LICENSE*", "AUTHORS*", "CHANGELOG*"]
        .map(String::from)
        .to_vec()
}

pub fn default_config_rules() -> Vec<String> {
    [
        ".github/**",
        ".gitlab-ci.yml",
        "*.toml",
        "*.cfg",
        "*.ini",
        "*.yml",
        "*.yaml",
        "setup.py",
        "Makefile",
        "Dockerfile",
        ".gitignore",
        ".pre-commit-config.yaml",
    ]
    .map(String::from)
    .to_vec()
}

/// Compiled form of [`PathRuleConfig`].
#[derive(Debug, Clone)]
pub struct PathClasses {
    pub test: PathRules,
    pub doc: PathRules,
    pub config: PathRules,
}

impl PathClasses {
    pub fn compile(cfg: &PathRuleConfig) -> Result<Self> {
        if cfg.test.is_empty() {
            return Err(Error::Config("test_path_rules must not be empty".into()));
        }
        Ok(Self {
            test: PathRules::new(&cfg.test)?,
            doc: PathRules::new(&cfg.doc)?,
            config: PathRules::new(&cfg.config)?,
        })
    }

    pub fn is_test(&self, path: &str) -> bool {
        self.test.matches(path)
    }

    pub fn is_doc(&self, path: &str) -> bool {
        !self.is_test(path) && self.doc.matches(path)
    }

    pub fn is_doc_or_config(&self, path: &str) -> bool {
        !self.is_test(path) && (self.doc.matches(path) || self.config.matches(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_and_basename_patterns() {
        let rules = PathRules::new(&["tests/**", "test_*"]).unwrap();
        assert!(rules.matches("tests/test_a.py"));
        assert!(rules.matches("tests/unit/helpers.py"));
        assert!(rules.matches("pkg/sub/test_x.py"));
        assert!(!rules.matches("src/m.py"));
        assert!(!rules.matches("src/testing.py"));
    }

    #[test]
    fn empty_test_rules_rejected() {
        let cfg = PathRuleConfig { test: vec![], ..Default::default() };
        assert!(PathClasses::compile(&cfg).is_err());
    }

    #[test]
    fn test_paths_are_never_docs() {
        let classes = PathClasses::compile(&PathRuleConfig::default()).unwrap();
        assert!(classes.is_doc("docs/usage.md"));
        assert!(classes.is_doc("README.md"));
        assert!(!classes.is_doc("tests/README.md"));
        assert!(classes.is_doc_or_config("pyproject.toml"));
        assert!(!classes.is_doc_or_config("src/calc/core.py"));
    }
}
