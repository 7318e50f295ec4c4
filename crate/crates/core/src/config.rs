//! Pipeline configuration file (TOML).
//!
//! Relative paths resolve against the config file's directory. Every
//! referenced path must exist when the file is loaded.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::agent::{Agent, AgentOptions, AgentRegistry};
use crate::eval::{EvaluationSetting, Harness, Mode};
use crate::forge::ChainPolicy;
use crate::metrics::{Analyzer, AnalyzerConfig, AnalyzerRegistry};
use crate::miner::classify::{Classifier, ClassifierConfig, ClassifierRegistry};
use crate::miner::discovery::{DiscoveryRegistry, TestDiscovery};
use crate::miner::texts::{FileMetadata, HttpMetadata, MetadataSource};
use crate::miner::{EvaluationWindow, RepositoryRef};
use crate::pathrules::{PathClasses, PathRuleConfig};
use crate::sandbox::container::{ContainerConfig, ContainerProvider};
use crate::sandbox::host::HostProvider;
use crate::sandbox::runner::DEFAULT_STDERR_CAP;
use crate::sandbox::{ProviderRegistry, RunnerProfile, SandboxProvider, SandboxSpec};
use crate::types::Timestamp;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepoConfig {
    /// Short name used in artifact paths and task ids.
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_branch")]
    pub branch: String,
    #[serde(default)]
    pub paths: PathRuleConfig,
    #[serde(default = "default_discovery")]
    pub discovery: String,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    /// Remote metadata service for linked issues.
    #[serde(default)]
    pub metadata_url: Option<String>,
    /// Local JSON file of linked issues.
    #[serde(default)]
    pub metadata_file: Option<PathBuf>,
    #[serde(default = "default_mine_limit")]
    pub mine_limit: usize,
}

fn default_branch() -> String {
    "main".into()
}
fn default_discovery() -> String {
    "pytest".into()
}
fn default_mine_limit() -> usize {
    100_000
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub t_start: Timestamp,
    pub t_end: Timestamp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default = "default_provider")]
    pub name: String,
    /// Parent directory for host sandboxes.
    #[serde(default)]
    pub base_dir: Option<PathBuf>,
    #[serde(default)]
    pub container: ContainerConfig,
}

fn default_provider() -> String {
    "host-venv".into()
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self { name: default_provider(), base_dir: None, container: ContainerConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingDefaults {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_cycles")]
    pub cycles_per_pr: usize,
    #[serde(default = "default_iterations")]
    pub iterations_per_cycle: u32,
}

fn default_mode() -> Mode {
    Mode::Individual
}
fn default_cycles() -> usize {
    3
}
fn default_iterations() -> u32 {
    40
}

impl Default for SettingDefaults {
    fn default() -> Self {
        Self { mode: default_mode(), cycles_per_pr: default_cycles(), iterations_per_cycle: default_iterations() }
    }
}

impl SettingDefaults {
    pub fn setting(&self, mode: Option<Mode>) -> EvaluationSetting {
        EvaluationSetting {
            mode: mode.unwrap_or(self.mode),
            cycles_per_pr: self.cycles_per_pr,
            iterations_per_cycle: self.iterations_per_cycle,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// `scripted:<name>`, `cmd:<argv>` or an `http(s)://` URL.
    #[serde(default)]
    pub spec: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_turn_timeout")]
    pub turn_timeout_s: u64,
    #[serde(default = "default_feedback_cap")]
    pub feedback_cap: usize,
}

fn default_turn_timeout() -> u64 {
    1800
}
fn default_feedback_cap() -> usize {
    DEFAULT_STDERR_CAP
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { spec: None, seed: 0, turn_timeout_s: default_turn_timeout(), feedback_cap: default_feedback_cap() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub repo: RepoConfig,
    /// Mining window; all history up to the branch tip when absent.
    #[serde(default)]
    pub window: Option<WindowConfig>,
    #[serde(default)]
    pub runner: Option<RunnerProfile>,
    /// Runner profile file (TOML or JSON); overrides `runner`.
    #[serde(default)]
    pub runner_profile: Option<PathBuf>,
    #[serde(default)]
    pub chains: ChainPolicy,
    #[serde(default)]
    pub validation: crate::validate::ValidationPolicy,
    #[serde(default)]
    pub sandbox: SandboxSpec,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub setting: SettingDefaults,
    #[serde(default)]
    pub agent: AgentConfig,
    /// Health analyzer; `provider = "none"` disables snapshots.
    #[serde(default)]
    pub analyzer: AnalyzerConfig,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub output_root: Option<PathBuf>,
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn must_exist(what: &str, p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", p.display())))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Parses TOML and resolves relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let mut cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner().message())))?;
        resolve(base, &mut cfg.repo.path);
        for p in [&mut cfg.repo.metadata_file, &mut cfg.runner_profile, &mut cfg.output_root, &mut cfg.provider.base_dir].into_iter().flatten() {
            resolve(base, p);
        }
        if let Some(p) = &cfg.runner_profile {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let profile: RunnerProfile = if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            } else {
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            };
            cfg.runner = Some(profile);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        must_exist("repository", &self.repo.path)?;
        if let Some(p) = &self.repo.metadata_file {
            must_exist("metadata file", p)?;
        }
        if let Some(p) = &self.provider.base_dir {
            must_exist("sandbox base dir", p)?;
        }
        if self.parallelism < 1 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if self.repo.name.is_empty() || self.repo.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("repo name {:?} is not a plain name", self.repo.name)));
        }
        if let Some(w) = self.window {
            EvaluationWindow::new(w.t_start, w.t_end)?;
        }
        self.chains.validate()?;
        self.sandbox.validate()?;
        self.setting.setting(None).validate()
    }

    pub fn window(&self) -> Result<EvaluationWindow> {
        match self.window {
            Some(w) => EvaluationWindow::new(w.t_start, w.t_end),
            None => {
                let log = crate::git::Git::open(&self.repo.path)?.first_parent_log(&self.repo.branch)?;
                let tip = log.last().map_or(Timestamp::UNIX_EPOCH, |c| c.committed_at);
                EvaluationWindow::new(Timestamp::UNIX_EPOCH, tip)
            }
        }
    }

    pub fn repository(&self) -> RepositoryRef {
        RepositoryRef {
            name: self.repo.name.clone(),
            root_path: self.repo.path.clone(),
            default_branch: self.repo.branch.clone(),
            test_path_rules: self.repo.paths.test.clone(),
        }
    }

    pub fn classes(&self) -> Result<PathClasses> {
        PathClasses::compile(&self.repo.paths)
    }

    /// Runner profile, with the sandbox's interpreter unless the profile names one.
    pub fn runner_profile(&self) -> RunnerProfile {
        self.runner.clone().unwrap_or_else(|| RunnerProfile::default().with_env_path(&self.sandbox.env_path))
    }

    pub fn provider(&self) -> Result<Arc<dyn SandboxProvider>> {
        let mut reg = ProviderRegistry::default();
        reg.register(Arc::new(HostProvider { base_dir: self.provider.base_dir.clone() }));
        reg.register(Arc::new(ContainerProvider::new(self.provider.container.clone())));
        reg.get(&self.provider.name)
    }

    pub fn discovery(&self) -> Result<Arc<dyn TestDiscovery>> {
        DiscoveryRegistry::with_defaults(&self.sandbox.env_path).get(&self.repo.discovery)
    }

    pub fn classifier(&self) -> Result<Arc<dyn Classifier>> {
        ClassifierRegistry::default().build(&self.repo.classifier)
    }

    pub fn metadata(&self) -> Result<Option<Arc<dyn MetadataSource>>> {
        if let Some(p) = &self.repo.metadata_file {
            return Ok(Some(Arc::new(FileMetadata::load(p)?)));
        }
        Ok(self.repo.metadata_url.as_ref().map(|u| Arc::new(HttpMetadata::from_env(u.clone())) as Arc<dyn MetadataSource>))
    }

    pub fn analyzer(&self) -> Result<Option<Arc<dyn Analyzer>>> {
        if self.analyzer.provider == "none" {
            return Ok(None);
        }
        AnalyzerRegistry::default().build(&self.analyzer).map(Some)
    }

    pub fn agent(&self, spec: Option<&str>, opts: &AgentOptions) -> Result<Arc<dyn Agent>> {
        let spec = spec
            .or(self.agent.spec.as_deref())
            .ok_or_else(|| Error::Config("no agent given; set agent.spec or pass one on the command line".into()))?;
        AgentRegistry::default().build(spec, opts)
    }

    pub fn harness(&self) -> Result<Harness> {
        let mut h = Harness::new(self.provider()?, self.sandbox.clone(), self.repo.path.clone(), self.classes()?);
        h.profile = self.runner_profile();
        h.cycle_timeout = Duration::from_secs(self.agent.turn_timeout_s);
        h.feedback_cap = self.agent.feedback_cap;
        h.analyzer = self.analyzer()?;
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_resolve_and_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("repo")).unwrap();
        let cfg = PipelineConfig::parse("parallelism = 2\n[repo]\nname = \"r\"\npath = \"repo\"\n", dir.path()).unwrap();
        assert_eq!(cfg.repo.path, dir.path().join("repo"));
        assert_eq!(cfg.setting.cycles_per_pr, 3);
        assert_eq!(cfg.runner_profile().env_path, "python3");

        let err = PipelineConfig::parse("[repo]\nname = \"r\"\npath = \"missing\"\n", dir.path()).unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
        let err = PipelineConfig::parse("parallelism = 0\n[repo]\nname = \"r\"\npath = \"repo\"\n", dir.path()).unwrap_err();
        assert!(err.to_string().contains("parallelism"), "{err}");
        let err = PipelineConfig::parse("[repo]\nname = \"r\"\npath = \"repo\"\nbogus = 1\n", dir.path()).unwrap_err();
        assert!(err.to_string().contains("repo"), "{err}");
    }

    #[test]
    fn unknown_strategies_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("[repo]\nname = \"r\"\npath = \"{}\"\n[provider]\nname = \"vm\"\n", dir.path().display());
        let cfg = PipelineConfig::parse(&text, dir.path()).unwrap();
        assert!(matches!(cfg.provider(), Err(Error::UnknownStrategy { kind: "sandbox provider", .. })));
    }
}
