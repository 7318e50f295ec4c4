use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use chainforge::config::PipelineConfig;
use chainforge::eval::agent::{Agent, AgentOptions, AgentRegistry};
use chainforge::eval::{run_chain, EvaluationSetting, Mode, PrStatus, RunRecord, RunStatus};
use chainforge::fixtures::{BuiltFixture, FixtureSpec};
use chainforge::forge::TaskChain;
use chainforge::pipeline;
use chainforge::store::Store;

struct Prepared {
    _dir: tempfile::TempDir,
    cfg: PipelineConfig,
    built: BuiltFixture,
    chains: Vec<TaskChain>,
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn prepare(file: &str, name: &str) -> Prepared {
    let dir = tempfile::tempdir().unwrap();
    let built = FixtureSpec::load(&fixture(file)).unwrap().build(&dir.path().join("src")).unwrap();
    let text = format!(
        "parallelism = 2\n[repo]\nname = \"{name}\"\npath = \"{}\"\n[analyzer]\nprovider = \"baseline\"\n",
        built.repo.display()
    );
    let cfg = PipelineConfig::parse(&text, dir.path()).unwrap();
    let store = Store::open(dir.path().join("out")).unwrap();
    pipeline::mine(&cfg, &store).unwrap();
    pipeline::validate(&cfg, &store).unwrap();
    let chains = pipeline::forge(&cfg, &store).unwrap();
    Prepared { _dir: dir, cfg, built, chains }
}

fn calc() -> &'static Prepared {
    static P: OnceLock<Prepared> = OnceLock::new();
    P.get_or_init(|| prepare("repo_a.toml", "calc"))
}

fn inv() -> &'static Prepared {
    static P: OnceLock<Prepared> = OnceLock::new();
    P.get_or_init(|| prepare("repo_b.toml", "inv"))
}

fn agent(p: &Prepared, spec: &str) -> Arc<dyn Agent> {
    let opts = AgentOptions { seed: 7, breaker: p.built.breaker.as_deref().map(|b| chainforge::fixtures::BreakerSpec::load(b).unwrap()) };
    AgentRegistry::default().build(spec, &opts).unwrap()
}

fn run(p: &Prepared, chain: &TaskChain, mode: Mode, spec: &str, runs: &Path) -> RunRecord {
    let harness = p.cfg.harness().unwrap();
    let a = agent(p, spec);
    let id = format!("{}-{}-{}", chain.task_id, mode, spec.replace(':', "_"));
    run_chain(&harness, chain, &EvaluationSetting::new(mode), a.as_ref(), runs, &id, false).unwrap()
}

#[test]
fn fixtures_forge_the_expected_chains() {
    let ids: Vec<&str> = calc().chains.iter().map(|c| c.task_id.as_str()).collect();
    assert_eq!(ids, ["calc__101-106"]);
    assert_eq!(calc().chains[0].n, 4);
    let ids: Vec<&str> = inv().chains.iter().map(|c| c.task_id.as_str()).collect();
    assert_eq!(ids, ["inv__201-204"]);
}

#[test]
fn gold_agent_solves_every_chain_in_every_setting() {
    let runs = tempfile::tempdir().unwrap();
    for p in [calc(), inv()] {
        for chain in &p.chains {
            for mode in Mode::ALL {
                let rec = run(p, chain, mode, "scripted:gold", runs.path());
                assert_eq!(rec.status, RunStatus::Completed, "{} {mode}", chain.task_id);
                assert!(rec.task_success, "{} {mode}: {:#?}", chain.task_id, rec.prs);
                assert!(rec.integrity.events.is_empty(), "{:?}", rec.integrity.events);
                for pr in &rec.prs {
                    assert!(pr.pr_success);
                    let used = pr.eval.as_ref().unwrap().cycles_used;
                    if mode == Mode::Prd {
                        assert!(used <= 2, "{used}");
                    } else {
                        assert_eq!(used, 1);
                    }
                    assert!(pr.flags.is_empty(), "{:?}", pr.flags);
                }
                assert!(rec.base_health.is_some());
                assert_eq!(rec.gold_health.len(), chain.n);
            }
        }
    }
}

#[test]
fn breaker_succeeds_more_often_in_individual_than_global() {
    let runs = tempfile::tempdir().unwrap();
    let p = inv();
    let chain = &p.chains[0];
    let individual = run(p, chain, Mode::Individual, "scripted:breaker", runs.path());
    let global = run(p, chain, Mode::Global, "scripted:breaker", runs.path());
    let wins = |r: &RunRecord| r.prs.iter().filter(|p| p.pr_success).count();
    assert_eq!(wins(&individual), 4);
    assert!(wins(&global) <= 2, "{}", wins(&global));
    assert!(!global.task_success);
}

#[test]
fn null_agent_spends_the_whole_budget_and_fails() {
    let runs = tempfile::tempdir().unwrap();
    let p = calc();
    let chain = &p.chains[0];
    let rec = run(p, chain, Mode::Individual, "scripted:null", runs.path());
    assert!(!rec.task_success);
    for pr in &rec.prs {
        assert_eq!(pr.status, PrStatus::Failed);
        assert_eq!(pr.cycles.len(), 3);
        let row = pr.eval.as_ref().unwrap();
        assert_eq!(row.f2p_passed, 0);
        assert_eq!(row.p2p_passed, row.p2p_total);
    }
    let prd = run(p, chain, Mode::Prd, "scripted:null", runs.path());
    assert_eq!(prd.pooled_cycles.len(), 3 * chain.n);
    rec.check_budget(chain.n).unwrap();
    prd.check_budget(chain.n).unwrap();
}

#[test]
fn cheating_agent_invalidates_the_run() {
    let runs = tempfile::tempdir().unwrap();
    let p = calc();
    let rec = run(p, &p.chains[0], Mode::Global, "scripted:cheat", runs.path());
    assert_eq!(rec.status, RunStatus::Invalidated);
    assert!(rec.flags.iter().any(|f| f == "cheat-suspected"));
    assert!(rec.integrity.events.iter().any(|e| e.kind == "tamper"), "{:?}", rec.integrity.events);
    assert!(rec.prs.iter().all(|p| !p.pr_success));
    let cheat: serde_json::Value =
        serde_json::from_slice(&std::fs::read(runs.path().join(&rec.run_id).join("pr1/cycle1/cheat.json")).unwrap()).unwrap();
    let outcome = |kind: &str| {
        cheat.as_array().unwrap().iter().find(|a| a["kind"] == kind).unwrap()["outcome"].as_str().unwrap().to_string()
    };
    assert_eq!(outcome("read-revoked-test"), "blocked");
    assert_eq!(outcome("read-future-commit"), "blocked");
}
