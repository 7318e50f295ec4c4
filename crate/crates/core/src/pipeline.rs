//! End-to-end steps over an artifact store: mine, validate, forge, deps.

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::deps::{all_dependencies, interdependence_ratio, DependencyEdge, Interdependence};
use crate::error::{Error, Result};
use crate::forge::{build_chains, compose_prd, IndexReplay, TaskChain};
use crate::git::Git;
use crate::miner::symbols::ExtractorRegistry;
use crate::miner::{Miner, PullRequestRecord};
use crate::store::{self, Store};
use crate::types::CommitId;
use crate::validate::{admit, log_root, summarize, ValidationReport, ValidationSummary, Validator};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedCandidate {
    pub commit_id: CommitId,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MineSummary {
    pub mined: usize,
    pub skipped: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Index written next to the task files of one repository.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeIndex {
    pub repo: String,
    pub tasks: Vec<String>,
    pub leftovers: Vec<CommitId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepsSummary {
    pub edges: usize,
    pub interdependence: Interdependence,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn in_pool<T: Send>(cfg: &PipelineConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

pub fn miner(cfg: &PipelineConfig) -> Result<Miner> {
    Ok(Miner {
        git: Git::open(&cfg.repo.path)?,
        repo: cfg.repository(),
        classes: cfg.classes()?,
        extractors: ExtractorRegistry::default(),
        discovery: cfg.discovery()?,
        metadata: cfg.metadata()?,
        classifier: Some(cfg.classifier()?),
    })
}

pub fn validator(cfg: &PipelineConfig, store: &Store) -> Result<Validator> {
    Ok(Validator {
        provider: cfg.provider()?,
        spec: cfg.sandbox.clone(),
        profile: cfg.runner_profile(),
        repo: cfg.repo.path.clone(),
        classes: cfg.classes()?,
        policy: cfg.validation.clone(),
        log_root: Some(log_root(store.root(), &cfg.repo.name)),
    })
}

/// Mines the window into `mined/<repo>.jsonl`.
pub fn mine(cfg: &PipelineConfig, store: &Store) -> Result<MineSummary> {
    let miner = miner(cfg)?;
    let window = cfg.window()?;
    let out = in_pool(cfg, || miner.mine(&window, cfg.repo.mine_limit))?;
    store::write_jsonl(&store.mined(&cfg.repo.name), &out.records)?;
    let skipped: Vec<SkippedCandidate> =
        out.skipped.into_iter().map(|(commit_id, reason)| SkippedCandidate { commit_id, reason }).collect();
    store::write_jsonl(&store.mined_skips(&cfg.repo.name), &skipped)?;
    let mut warnings = Vec::new();
    if out.records.is_empty() {
        warnings.push("no pull requests in the window".to_string());
    }
    Ok(MineSummary { mined: out.records.len(), skipped: skipped.len(), warnings })
}

pub fn load_mined(cfg: &PipelineConfig, store: &Store) -> Result<Vec<PullRequestRecord>> {
    let path = store.mined(&cfg.repo.name);
    if !path.exists() {
        return Err(Error::Config(format!("{} not found; run mine first", path.display())));
    }
    store::read_jsonl(&path)
}

pub fn load_admitted(cfg: &PipelineConfig, store: &Store) -> Result<Vec<PullRequestRecord>> {
    let path = store.admitted(&cfg.repo.name);
    if !path.exists() {
        return Err(Error::Config(format!("{} not found; run validate first", path.display())));
    }
    store::read_jsonl(&path)
}

/// Validates mined records; writes admitted records, reports and a summary.
pub fn validate(cfg: &PipelineConfig, store: &Store) -> Result<(ValidationSummary, Vec<ValidationReport>)> {
    let records = load_mined(cfg, store)?;
    let validator = validator(cfg, store)?;
    let reports = in_pool(cfg, || validator.validate_all(&records))?;
    let admitted: Vec<PullRequestRecord> = records.iter().zip(&reports).filter_map(|(r, rep)| admit(r, rep)).collect();
    let summary = summarize(&cfg.repo.name, &reports);
    store::write_jsonl(&store.admitted(&cfg.repo.name), &admitted)?;
    store::write_jsonl(&store.validation_reports(&cfg.repo.name), &reports)?;
    store::write_json(&store.validation_summary(&cfg.repo.name), &summary)?;
    Ok((summary, reports))
}

fn index_path(store: &Store, repo: &str) -> std::path::PathBuf {
    store.tasks_dir().join(format!("{repo}.index.json"))
}

/// Groups admitted records into chains; writes one task file and one PRD
/// file per chain.
pub fn forge(cfg: &PipelineConfig, store: &Store) -> Result<Vec<TaskChain>> {
    let admitted = load_admitted(cfg, store)?;
    let git = Git::open(&cfg.repo.path)?;
    let mainline: Vec<CommitId> = git.first_parent_log(&cfg.repo.branch)?.into_iter().map(|c| c.id).collect();
    let check = IndexReplay { git };
    let out = build_chains(&cfg.repo.name, &admitted, &mainline, &cfg.window()?, &cfg.chains, &check)?;
    for chain in &out.chains {
        chain.check(cfg.chains.min_len)?;
        store::write_json(&store.task(&chain.task_id), chain)?;
        store::write_atomic(&store.prd(&chain.task_id), compose_prd(chain).as_bytes())?;
    }
    let index = ForgeIndex {
        repo: cfg.repo.name.clone(),
        tasks: out.chains.iter().map(|c| c.task_id.clone()).collect(),
        leftovers: out.leftovers,
    };
    store::write_json(&index_path(store, &cfg.repo.name), &index)?;
    Ok(out.chains)
}

/// Loads and checks a task file.
pub fn load_task(path: &std::path::Path) -> Result<TaskChain> {
    let chain: TaskChain = store::read_json(path)?;
    chain.check(1).map_err(|e| Error::Artifact { path: path.to_path_buf(), field: "(chain)".into(), reason: e.to_string() })?;
    Ok(chain)
}

/// Dependency edges over the mined records and the share of forged chains
/// that contain one.
pub fn deps(cfg: &PipelineConfig, store: &Store) -> Result<DepsSummary> {
    let records = load_mined(cfg, store)?;
    let git = Git::open(&cfg.repo.path)?;
    let (edges, warnings): (Vec<DependencyEdge>, Vec<String>) = all_dependencies(&records, &git)?;
    let index_file = index_path(store, &cfg.repo.name);
    let chains: Vec<Vec<CommitId>> = if index_file.exists() {
        let index: ForgeIndex = store::read_json(&index_file)?;
        index.tasks.iter().map(|id| load_task(&store.task(id)).map(|c| c.commit_ids())).collect::<Result<_>>()?
    } else {
        vec![]
    };
    let interdependence = interdependence_ratio(&chains, &edges);
    store::write_jsonl(&store.edges(&cfg.repo.name), &edges)?;
    store::write_json(&store.interdependence(&cfg.repo.name), &interdependence)?;
    Ok(DepsSummary { edges: edges.len(), interdependence, warnings })
}
