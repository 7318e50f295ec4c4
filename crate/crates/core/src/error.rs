use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface.
///
/// Variants map one-to-one onto the named error conditions of each stage so
/// the CLI can translate them into exit codes and machine-readable reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("repository unreadable at {path}: {reason}")]
    RepoUnreadable { path: PathBuf, reason: String },

    #[error("malformed diff at line {line}: {reason}")]
    MalformedDiff { line: usize, reason: String },

    #[error("no symbol extractor registered for `{extension}`")]
    UnsupportedLanguage { extension: String },

    #[error("test discovery failed at {commit}: {reason}")]
    DiscoveryFailed { commit: String, reason: String },

    #[error("metadata unavailable: {0}")]
    MetadataUnavailable(String),

    #[error("classifier unavailable: {0}")]
    ClassifierUnavailable(String),

    #[error("classifier response violates schema: {0}")]
    SchemaViolation(String),

    #[error("blame failed for {file}: {reason}")]
    BlameFailed { file: String, reason: String },

    #[error("provision failed ({}): {reason}", if *.retryable { "retryable" } else { "fatal" })]
    ProvisionFailed { reason: String, retryable: bool },

    #[error("patch conflict in {file}: {context}")]
    PatchConflict { file: String, context: String },

    #[error("freeze unsupported by provider `{0}`")]
    FreezeUnsupported(String),

    #[error("restored content of {file} does not match its recorded digest")]
    RestoreMismatch { file: String },

    #[error("test runner crashed (exit {exit_code}): {reason}")]
    RunnerCrash { exit_code: i32, reason: String },

    #[error("sandbox {id} is {state}")]
    SandboxState { id: String, state: String },

    #[error("agent error: {0}")]
    Agent(String),

    #[error("empty chain")]
    EmptyChain,

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: invalid artifact at `{field}`: {reason}")]
    Artifact { path: PathBuf, field: String, reason: String },

    #[error("output root {0} is locked by another writer")]
    Locked(PathBuf),

    #[error("command `{command}` failed: {stderr}")]
    Command { command: String, stderr: String },

    #[error("analyzer failed: {0}")]
    AnalyzerFailed(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy { kind: &'static str, name: String, available: String },

    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Self::Invalid { what, reason: reason.into() }
    }

    /// Stable snake_case name used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::RepoUnreadable { .. } => "RepoUnreadable",
            Self::MalformedDiff { .. } => "MalformedDiff",
            Self::UnsupportedLanguage { .. } => "UnsupportedLanguage",
            Self::DiscoveryFailed { .. } => "DiscoveryFailed",
            Self::MetadataUnavailable(_) => "MetadataUnavailable",
            Self::ClassifierUnavailable(_) => "ClassifierUnavailable",
            Self::SchemaViolation(_) => "SchemaViolation",
            Self::BlameFailed { .. } => "BlameFailed",
            Self::ProvisionFailed { .. } => "ProvisionFailed",
            Self::PatchConflict { .. } => "PatchConflict",
            Self::FreezeUnsupported(_) => "FreezeUnsupported",
            Self::RestoreMismatch { .. } => "RestoreMismatch",
            Self::RunnerCrash { .. } => "RunnerCrash",
            Self::SandboxState { .. } => "SandboxState",
            Self::Agent(_) => "AgentError",
            Self::EmptyChain => "EmptyChain",
            Self::Invalid { .. } => "Invalid",
            Self::Config(_) => "ConfigError",
            Self::Artifact { .. } => "ArtifactInvalid",
            Self::Locked(_) => "Locked",
            Self::Command { .. } => "CommandFailed",
            Self::AnalyzerFailed(_) => "AnalyzerFailed",
            Self::UnknownStrategy { .. } => "UnknownStrategy",
            Self::Io { .. } => "IoError",
            Self::Json(_) => "JsonError",
        }
    }

    /// Configuration and infrastructure problems, as opposed to per-item failures.
    pub fn is_infrastructure(&self) -> bool {
        matches!(
            self,
            Self::RepoUnreadable { .. }
                | Self::ProvisionFailed { .. }
                | Self::Config(_)
                | Self::Locked(_)
                | Self::Io { .. }
                | Self::UnknownStrategy { .. }
                | Self::Artifact { .. }
                | Self::Command { .. }
        )
    }
}
