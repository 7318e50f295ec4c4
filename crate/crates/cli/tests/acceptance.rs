//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p chainforge-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use chainforge::config::PipelineConfig;
use chainforge::eval::scripted::{marker_runner_profile, RandomAgent};
use chainforge::eval::{cascade_suite, run_chain, EvaluationSetting, Mode, RunRecord, RunStatus};
use chainforge::forge::VerificationSuite;
use chainforge::metrics::{aggregate, bin_of, cognitive_complexity, score_task, EvalRow, Rate, TaskScore};
use chainforge::pipeline;
use chainforge::store::{self, Store};
use chainforge::types::TestId;
use chainforge::validate::ValidationReport;

/// Wall-clock ceiling for mine + validate on the small fixture.
const PIPELINE_LIMIT: Duration = Duration::from_secs(300);
const BUDGET_RUNS: u64 = 100;
const CASCADE_CASES: u32 = 1000;
const MUTATIONS: usize = 500;
/// Tolerance for float comparisons on mean cost.
const COST_EPS: f64 = 1e-9;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixture_spec(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

struct Cli {
    code: i32,
    stdout: Value,
    stderr: String,
}

fn cf(home: &Path, config: Option<&Path>, args: &[&str]) -> Cli {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chainforge"));
    cmd.arg("--home").arg(home);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    let out = cmd.args(args).output().expect("spawn chainforge");
    Cli {
        code: out.status.code().unwrap_or(-1),
        stdout: serde_json::from_slice(&out.stdout).unwrap_or(Value::Null),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// A fixture built through the CLI, with its config file.
struct Fixture {
    config: PathBuf,
    breaker: Option<PathBuf>,
}

fn build_fixture(spec: &str, dest: &Path) -> Result<Fixture, String> {
    let out = cf(&dest.join("unused-home"), None, &["fixture", "build", fixture_spec(spec).to_str().unwrap(), "--dest", dest.to_str().unwrap()]);
    ensure!(out.code == 0, "fixture build {spec}: {}", out.stderr);
    let config = PathBuf::from(out.stdout["config"].as_str().ok_or("no config path")?);
    let text = std::fs::read_to_string(&config).map_err(|e| e.to_string())?;
    std::fs::write(&config, format!("parallelism = 2\n{text}")).map_err(|e| e.to_string())?;
    let breaker = out.stdout["breaker"].as_str().map(PathBuf::from);
    Ok(Fixture { config, breaker })
}

fn pipeline_cli(home: &Path, config: &Path) -> Result<Vec<String>, String> {
    for step in ["mine", "validate"] {
        let out = cf(home, Some(config), &[step]);
        ensure!(out.code == 0, "{step} exited {}: {}", out.code, out.stderr);
    }
    let out = cf(home, Some(config), &["forge"]);
    ensure!(out.code == 0, "forge exited {}: {}", out.code, out.stderr);
    Ok(out.stdout["chains"].as_array().ok_or("forge output")?.iter().map(|c| c["task_id"].as_str().unwrap_or_default().to_string()).collect())
}

/// Shared state: the calc fixture mined, validated and forged once.
struct World {
    _dir: tempfile::TempDir,
    root: PathBuf,
    calc: Fixture,
    calc_home: PathBuf,
    calc_tasks: Vec<String>,
    inv: Fixture,
    inv_home: PathBuf,
    inv_tasks: Vec<String>,
}

fn run_json(home: &Path, config: &Path, args: &[&str]) -> Result<Value, String> {
    let out = cf(home, Some(config), &[&["run"], args].concat());
    ensure!(out.stdout.is_object(), "run {args:?} exited {}: {}", out.code, out.stderr);
    let path = out.stdout["record"].as_str().ok_or("no record path")?;
    let rec = std::fs::read(path).map_err(|e| format!("{path}: {e}"))?;
    serde_json::from_slice(&rec).map_err(|e| e.to_string())
}

fn record(v: &Value) -> Result<RunRecord, String> {
    serde_json::from_value(v.clone()).map_err(|e| e.to_string())
}

// 1. Pipeline round trip on the small fixture.
fn criterion_1(w: &mut Option<World>) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().to_path_buf();
    let calc = build_fixture("repo_a.toml", &root.join("fx-a"))?;
    let calc_home = root.join("home-a");
    let started = Instant::now();
    let mut mined = 0;
    for step in ["mine", "validate"] {
        let out = cf(&calc_home, Some(&calc.config), &[step]);
        ensure!(out.code == 0, "{step} exited {}: {}", out.code, out.stderr);
        if step == "mine" {
            mined = out.stdout["mined"].as_u64().unwrap_or(0);
        }
    }
    ensure!(mined == 6, "mined {mined} pull requests");
    let elapsed = started.elapsed();
    ensure!(elapsed < PIPELINE_LIMIT, "mine+validate took {elapsed:?}");

    let store = Store::open(&calc_home).map_err(|e| e.to_string())?;
    let reports: Vec<ValidationReport> = store::read_jsonl(&store.validation_reports("calc")).map_err(|e| e.to_string())?;
    let by_number: BTreeMap<u64, Value> =
        reports.iter().map(|r| (r.pr_number, serde_json::to_value(r).unwrap())).collect();
    let admitted: Vec<u64> = by_number.iter().filter(|(_, r)| r["verdict"] == "admitted").map(|(n, _)| *n).collect();
    ensure!(admitted == [101, 103, 105, 106], "admitted {admitted:?}");
    ensure!(by_number[&102]["exclusion_reason"] == "docs-or-infra-only", "102: {}", by_number[&102]);
    let flaky = by_number[&104]["pruned_f2p"].as_array().map(|a| a.iter().any(|p| p["reason"] == "flaky")).unwrap_or(false);
    ensure!(flaky, "104 flaky test not pruned: {}", by_number[&104]);

    let cfg = PipelineConfig::load(&calc.config).map_err(|e| e.to_string())?;
    let validator = pipeline::validator(&cfg, &store).map_err(|e| e.to_string())?;
    let records = pipeline::load_admitted(&cfg, &store).map_err(|e| e.to_string())?;
    ensure!(records.len() == 4, "{} admitted records", records.len());
    for r in &records {
        let ok = validator.replay_admitted(r).map_err(|e| e.to_string())?;
        ensure!(ok, "replay of {} did not reproduce", r.pr_number);
    }

    let out = cf(&calc_home, Some(&calc.config), &["forge"]);
    ensure!(out.code == 0, "forge: {}", out.stderr);
    let calc_tasks: Vec<String> =
        out.stdout["chains"].as_array().ok_or("forge output")?.iter().map(|c| c["task_id"].as_str().unwrap_or_default().to_string()).collect();

    let inv = build_fixture("repo_b.toml", &root.join("fx-b"))?;
    let inv_home = root.join("home-b");
    let inv_tasks = pipeline_cli(&inv_home, &inv.config)?;
    *w = Some(World { _dir: dir, root, calc, calc_home, calc_tasks, inv, inv_home, inv_tasks });
    Ok(format!("6 mined, 4 admitted, 102 docs-only, 104 flaky pruned, 4/4 replays reproduce, {:.1}s", elapsed.as_secs_f64()))
}

fn world(w: &Option<World>) -> Result<&World, String> {
    w.as_ref().ok_or_else(|| "depends on criterion 1".to_string())
}

// 2. The gold agent solves every chain in every setting.
fn criterion_2(w: &Option<World>) -> Outcome {
    let w = world(w)?;
    ensure!(w.calc_tasks == ["calc__101-106"], "calc tasks {:?}", w.calc_tasks);
    ensure!(w.inv_tasks == ["inv__201-204"], "inv tasks {:?}", w.inv_tasks);
    let mut runs = 0;
    for (fx, home, tasks) in [(&w.calc, &w.calc_home, &w.calc_tasks), (&w.inv, &w.inv_home, &w.inv_tasks)] {
        for task in tasks {
            for mode in ["individual", "global", "prd"] {
                let rec = record(&run_json(home, &fx.config, &["--task", task, "--setting", mode, "--agent", "scripted:gold"])?)?;
                ensure!(rec.status == RunStatus::Completed && rec.task_success, "{task} {mode}: {:?}", rec.status);
                for pr in &rec.prs {
                    let used = pr.eval.as_ref().map(|e| e.cycles_used).unwrap_or(0);
                    let limit = if mode == "prd" { 2 } else { 1 };
                    ensure!(pr.pr_success && (1..=limit).contains(&used), "{task} {mode} PR {}: cycles {used}", pr.ordinal);
                }
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs, all succeeded within one cycle per PR"))
}

// 3. The breaker agent wins more PRs in the Individual setting than in Global.
fn criterion_3(w: &Option<World>) -> Outcome {
    let w = world(w)?;
    let breaker = w.inv.breaker.as_ref().ok_or("inv fixture has no breaker spec")?;
    let task = w.inv_tasks.first().ok_or("no inv task")?;
    let wins = |mode: &str| -> Result<usize, String> {
        let rec = record(&run_json(&w.inv_home, &w.inv.config, &[
            "--task", task, "--setting", mode, "--agent", "scripted:breaker", "--breaker", breaker.to_str().unwrap(),
        ])?)?;
        Ok(rec.prs.iter().filter(|p| p.pr_success).count())
    };
    let (ind, glob) = (wins("individual")?, wins("global")?);
    ensure!(ind > glob, "individual {ind} vs global {glob}");
    Ok(format!("individual {ind}/4, global {glob}/4"))
}

// 4. Budget ceilings hold for randomised agents.
fn criterion_4(w: &Option<World>) -> Outcome {
    let w = world(w)?;
    let cfg = PipelineConfig::load(&w.calc.config).map_err(|e| e.to_string())?;
    let mut harness = cfg.harness().map_err(|e| e.to_string())?;
    harness.profile = marker_runner_profile();
    harness.analyzer = None;
    let store = Store::open(&w.calc_home).map_err(|e| e.to_string())?;
    let chain = pipeline::load_task(&store.task(&w.calc_tasks[0])).map_err(|e| e.to_string())?;
    let runs = w.root.join("budget-runs");
    let mut clamped = 0usize;
    let mut cycles = 0usize;
    for seed in 0..BUDGET_RUNS {
        let mode = Mode::ALL[seed as usize % Mode::ALL.len()];
        let setting = EvaluationSetting::new(mode);
        let agent = RandomAgent { seed };
        let rec = run_chain(&harness, &chain, &setting, &agent, &runs, &format!("random-{seed}"), false).map_err(|e| format!("seed {seed}: {e}"))?;
        rec.check_budget(chain.n).map_err(|e| e.to_string())?;
        let pool = setting.cycles_per_pr * chain.n;
        match mode {
            Mode::Prd => ensure!(rec.pooled_cycles.len() <= pool, "seed {seed}: {} pooled", rec.pooled_cycles.len()),
            _ => ensure!(rec.prs.iter().all(|p| p.cycles.len() <= setting.cycles_per_pr), "seed {seed}: per-PR cycles"),
        }
        for c in rec.all_cycles() {
            ensure!(c.turn.iterations_used <= setting.iterations_per_cycle, "seed {seed}: {} iterations", c.turn.iterations_used);
            clamped += c.flags.iter().filter(|f| f.starts_with("iterations-overreported")).count();
            cycles += 1;
        }
    }
    ensure!(clamped > 0, "no over-reported iteration counts were exercised");
    Ok(format!("{BUDGET_RUNS} runs, {cycles} cycles, {clamped} over-reports clamped"))
}

fn cascade_oracle(suites: &[VerificationSuite], i: usize) -> (BTreeSet<TestId>, BTreeSet<TestId>) {
    let mut p2p: BTreeSet<TestId> = suites[i - 1].pass_to_pass.iter().cloned().collect();
    for s in &suites[..i - 1] {
        p2p.extend(s.fail_to_pass.iter().cloned());
        p2p.extend(s.pass_to_pass.iter().cloned());
    }
    let f2p = suites[i - 1].fail_to_pass.iter().filter(|t| !p2p.contains(*t)).cloned().collect();
    (f2p, p2p)
}

fn suite_strategy() -> impl Strategy<Value = VerificationSuite> {
    (prop::collection::btree_set(0u8..30, 1..6), prop::collection::btree_set(0u8..30, 0..6)).prop_map(|(f, p)| {
        let id = |n: &u8| TestId::new(format!("tests/test_m.py::test_{n}"));
        VerificationSuite {
            fail_to_pass: f.iter().map(id).collect(),
            pass_to_pass: p.iter().filter(|n| !f.contains(n)).map(id).collect(),
        }
    })
}

// 5. Cascaded suites match the set-algebra oracle.
fn criterion_5() -> Outcome {
    let mut runner = TestRunner::new(PropConfig { cases: CASCADE_CASES, failure_persistence: None, ..PropConfig::default() });
    let strategy = prop::collection::vec(suite_strategy(), 1..=11);
    runner
        .run(&strategy, |suites| {
            let mut prev: BTreeSet<TestId> = BTreeSet::new();
            for i in 1..=suites.len() {
                let got = cascade_suite(&suites, i);
                let (f2p, p2p) = cascade_oracle(&suites, i);
                let got_f: BTreeSet<TestId> = got.fail_to_pass.iter().cloned().collect();
                let got_p: BTreeSet<TestId> = got.pass_to_pass.iter().cloned().collect();
                prop_assert_eq!(got_f.len(), got.fail_to_pass.len(), "duplicate F2P ids");
                prop_assert_eq!(got_p.len(), got.pass_to_pass.len(), "duplicate P2P ids");
                prop_assert_eq!(&got_f, &f2p);
                prop_assert_eq!(&got_p, &p2p);
                if !prev.is_subset(&got_p) {
                    return Err(TestCaseError::fail(format!("P2P({}) not a superset of P2P({})", i, i - 1)));
                }
                prev = got_p;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{CASCADE_CASES} generated chains of up to 11 PRs"))
}

fn cheat_outcomes(run_dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for entry in walk(run_dir) {
        if entry.file_name().is_some_and(|n| n == "cheat.json") {
            let v: Value = serde_json::from_slice(&std::fs::read(&entry).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            for a in v.as_array().into_iter().flatten() {
                out.entry(a["kind"].as_str().unwrap_or_default().to_string())
                    .or_insert_with(|| a["outcome"].as_str().unwrap_or_default().to_string());
            }
        }
    }
    Ok(out)
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

// 6. Cheating attempts are detected or blocked.
fn criterion_6(w: &Option<World>) -> Outcome {
    let w = world(w)?;
    let task = &w.calc_tasks[0];
    let v = run_json(&w.calc_home, &w.calc.config, &["--task", task, "--setting", "global", "--agent", "scripted:cheat", "--run-id", "cheat-open"])?;
    let rec = record(&v)?;
    ensure!(rec.status == RunStatus::Invalidated, "unguarded status {:?}", rec.status);
    ensure!(rec.integrity.events.iter().any(|e| e.kind == "tamper"), "no tamper event: {:?}", rec.integrity.events);
    let open = cheat_outcomes(&w.calc_home.join("runs/cheat-open"))?;
    for kind in ["read-revoked-test", "read-future-commit"] {
        ensure!(open.get(kind).map(String::as_str) == Some("blocked"), "unguarded {kind}: {:?}", open.get(kind));
    }

    // Same attempts with the agent on an unprivileged uid.
    let text = std::fs::read_to_string(&w.calc.config).map_err(|e| e.to_string())?;
    let guarded = w.root.join("fx-a/calc-guarded.toml");
    std::fs::write(&guarded, format!("{text}\n[sandbox]\nagent_uid = 65534\n")).map_err(|e| e.to_string())?;
    let v = run_json(&w.calc_home, &guarded, &["--task", task, "--setting", "global", "--agent", "scripted:cheat", "--run-id", "cheat-guarded"])?;
    let rec = record(&v)?;
    let outcomes = cheat_outcomes(&w.calc_home.join("runs/cheat-guarded"))?;
    if rec.integrity.guard.permissions_enforced {
        for kind in ["edit-frozen-test", "read-revoked-test", "read-future-commit"] {
            ensure!(outcomes.get(kind).map(String::as_str) == Some("blocked"), "guarded {kind}: {outcomes:?}");
        }
        ensure!(!rec.task_success, "cheating agent succeeded");
        Ok(format!("unguarded run invalidated by tamper detection; guarded run blocked all attempts {outcomes:?}"))
    } else {
        ensure!(rec.status == RunStatus::Invalidated, "guard unavailable and run not invalidated");
        Ok(format!("unguarded run invalidated; uid guard unavailable here ({:?}), tamper detection invalidated the run", rec.integrity.guard.notes))
    }
}

fn row(pass: bool) -> EvalRow {
    let (f, p) = if pass { (3, 5) } else { (1, 4) };
    EvalRow { f2p_passed: f, f2p_total: 3, p2p_passed: p, p2p_total: 5, pr_success: pass, missing: vec![], cycles_used: 1, cost_usd: None }
}

// 7. Scoring and aggregation against hand-computed values.
fn criterion_7() -> Outcome {
    let specs: [(&str, &str, usize, Option<f64>); 5] =
        [("a", "T1", 4, Some(1.5)), ("a", "T2", 3, None), ("a", "T3", 2, Some(0.5)), ("b", "T4", 4, Some(2.0)), ("b", "T5", 0, None)];
    let tasks: Vec<TaskScore> = specs
        .iter()
        .map(|(repo, id, wins, cost)| {
            let rows: Vec<EvalRow> = (0..4).map(|k| row(k < *wins)).collect();
            let task_success = score_task(&rows).unwrap();
            TaskScore { repo: repo.to_string(), task_id: id.to_string(), setting: "individual".into(), agent: "x".into(), rows, task_success, cost_usd: *cost }
        })
        .collect();
    let rows = aggregate(&tasks).map_err(|e| e.to_string())?;
    let get = |scope: &str| rows.iter().find(|r| r.scope == scope).ok_or(format!("no {scope} row"));
    let all = get("overall")?;
    ensure!(all.prs.to_string() == "65.00" && all.prs == Rate::new(13, 20), "PR rate {:?}", all.prs);
    ensure!(all.tasks.to_string() == "40.00", "task rate {}", all.tasks);
    ensure!(all.f2p.to_string() == "76.67" && all.f2p == Rate::new(46, 60), "f2p {:?}", all.f2p);
    ensure!(all.p2p.to_string() == "93.00" && all.p2p == Rate::new(93, 100), "p2p {:?}", all.p2p);
    ensure!(all.cost_known_tasks == 3, "cost known {}", all.cost_known_tasks);
    let mean = all.mean_cost_per_task.ok_or("no mean cost")?;
    ensure!((mean - 4.0 / 3.0).abs() < COST_EPS, "mean cost {mean}");
    ensure!(get("a")?.prs.to_string() == "75.00", "repo a {}", get("a")?.prs);
    ensure!(get("b")?.prs.to_string() == "50.00", "repo b {}", get("b")?.prs);
    ensure!(Rate::new(53, 80).to_string() == "66.25", "53/80");
    ensure!(score_task(&[]).is_err(), "empty chain scored");
    Ok("PR 65.00, task 40.00, F2P 76.67, P2P 93.00, mean cost 1.3333 over 3 tasks".into())
}

#[derive(Clone, Debug)]
enum Node {
    Simple,
    If(Vec<Node>),
    For(Vec<Node>),
    While(Vec<Node>),
    Try(Vec<Node>),
}

impl Node {
    fn children(&self) -> Option<&Vec<Node>> {
        match self {
            Node::Simple => None,
            Node::If(c) | Node::For(c) | Node::While(c) | Node::Try(c) => Some(c),
        }
    }
    fn children_mut(&mut self) -> Option<&mut Vec<Node>> {
        match self {
            Node::Simple => None,
            Node::If(c) | Node::For(c) | Node::While(c) | Node::Try(c) => Some(c),
        }
    }
}

fn render(nodes: &[Node], depth: usize, out: &mut String) {
    let pad = "    ".repeat(depth);
    if nodes.is_empty() {
        out.push_str(&format!("{pad}pass\n"));
    }
    for n in nodes {
        match n {
            Node::Simple => out.push_str(&format!("{pad}x = x + 1\n")),
            Node::If(c) => {
                out.push_str(&format!("{pad}if x > 2:\n"));
                render(c, depth + 1, out);
            }
            Node::For(c) => {
                out.push_str(&format!("{pad}for y in range(x):\n"));
                render(c, depth + 1, out);
            }
            Node::While(c) => {
                out.push_str(&format!("{pad}while x < 9:\n"));
                render(c, depth + 1, out);
            }
            Node::Try(c) => {
                out.push_str(&format!("{pad}try:\n"));
                render(c, depth + 1, out);
                out.push_str(&format!("{pad}except ValueError:\n{pad}    pass\n"));
            }
        }
    }
}

fn source(tree: &[Node]) -> String {
    let mut s = String::from("def f(x):\n");
    render(tree, 1, &mut s);
    s
}

fn control(rng: &mut StdRng) -> Node {
    let body = vec![Node::Simple];
    match rng.gen_range(0..4) {
        0 => Node::If(body),
        1 => Node::For(body),
        2 => Node::While(body),
        _ => Node::Try(body),
    }
}

/// Paths to every block (list of children), root first.
fn blocks(nodes: &[Node], path: Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(path.clone());
    for (i, n) in nodes.iter().enumerate() {
        if let Some(c) = n.children() {
            let mut p = path.clone();
            p.push(i);
            blocks(c, p, out);
        }
    }
}

fn block_mut<'a>(tree: &'a mut Vec<Node>, path: &[usize]) -> &'a mut Vec<Node> {
    let mut cur = tree;
    for &i in path {
        cur = cur[i].children_mut().expect("block path");
    }
    cur
}

/// Control nodes whose bodies hold no further control structure.
fn leaves(tree: &[Node], path: Vec<usize>, out: &mut Vec<Vec<usize>>) {
    for (i, n) in tree.iter().enumerate() {
        if let Some(c) = n.children() {
            let mut p = path.clone();
            p.push(i);
            if c.iter().all(|x| matches!(x, Node::Simple)) {
                out.push(p.clone());
            }
            leaves(c, p, out);
        }
    }
}

// 8. Complexity values on curated snippets and monotonicity under edits.
fn criterion_8() -> Outcome {
    let curated: [(&str, &str, u64); 10] = [
        ("empty", "", 0),
        ("literal", "x = \"if a and b else c\"\n", 0),
        ("flat-if", "if a:\n    pass\n", 1),
        ("elif-else", "if a:\n    pass\nelif b:\n    pass\nelse:\n    pass\n", 3),
        ("and-chain", "x = a and b and c\n", 1),
        ("mixed-bool", "x = a and b or c\n", 2),
        ("if-and", "if a and b:\n    pass\n", 2),
        ("nested-def", "def f():\n    def g():\n        if a:\n            pass\n", 2),
        ("nesting", "if a:\n    for b in c:\n        while d:\n            pass\n", 6),
        ("except-in-loop", "for x in xs:\n    try:\n        f(x)\n    except ValueError:\n        pass\n", 3),
    ];
    for (name, src, want) in curated {
        let got = cognitive_complexity(src);
        ensure!(got == want, "{name}: {got}, expected {want}");
    }

    let mut rng = StdRng::seed_from_u64(0xC0FFEE);
    let mut tree: Vec<Node> = vec![Node::Simple];
    let (mut adds, mut deletes) = (0, 0);
    for step in 0..MUTATIONS {
        let before_src = source(&tree);
        let before = cognitive_complexity(&before_src);
        let mut candidates = Vec::new();
        leaves(&tree, vec![], &mut candidates);
        let delete = !candidates.is_empty() && rng.gen_bool(0.4);
        if delete {
            let path = candidates[rng.gen_range(0..candidates.len())].clone();
            let (last, parent) = path.split_last().unwrap();
            block_mut(&mut tree, parent).remove(*last);
            deletes += 1;
        } else {
            let mut bs = Vec::new();
            blocks(&tree, vec![], &mut bs);
            let path = bs[rng.gen_range(0..bs.len())].clone();
            let block = block_mut(&mut tree, &path);
            let at = rng.gen_range(0..=block.len());
            block.insert(at, control(&mut rng));
            adds += 1;
        }
        let after = cognitive_complexity(&source(&tree));
        if delete {
            ensure!(after < before, "step {step}: delete kept complexity {before} -> {after}\n{before_src}");
        } else {
            ensure!(after > before, "step {step}: add kept complexity {before} -> {after}\n{before_src}");
        }
    }
    Ok(format!("10 curated snippets exact; {adds} additions raised and {deletes} deletions lowered complexity"))
}

// 9. Relative-position binning.
fn criterion_9() -> Outcome {
    let mut checked = 0;
    for n in 2..=20usize {
        for k in 1..=n {
            let want = (1..=5).find(|b| 5 * (k - 1) < b * n).unwrap();
            let got = bin_of(k, n, 5);
            ensure!(got == want, "bin_of({k}, {n}) = {got}, expected {want}");
            checked += 1;
        }
    }
    let five: Vec<usize> = (1..=5).map(|k| bin_of(k, 5, 5)).collect();
    ensure!(five == [1, 2, 3, 4, 5], "n=5: {five:?}");
    let ten: Vec<usize> = (1..=10).map(|k| bin_of(k, 10, 5)).collect();
    ensure!(ten == [1, 1, 2, 2, 3, 3, 4, 4, 5, 5], "n=10: {ten:?}");
    Ok(format!("{checked} (k, n) pairs match"))
}

fn tree_bytes(root: &Path, rels: &[&str]) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for rel in rels {
        let base = root.join(rel);
        let files = if base.is_file() { vec![base.clone()] } else { walk(&base) };
        for f in files {
            let key = f.strip_prefix(root).unwrap().display().to_string();
            out.insert(key, std::fs::read(&f).unwrap_or_default());
        }
    }
    out
}

fn turn_log(path: &Path) -> Vec<(usize, usize)> {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .filter_map(|l| {
            let pr = l.split_whitespace().find_map(|t| t.strip_prefix("pr="))?.parse().ok()?;
            let cycle = l.split_whitespace().find_map(|t| t.strip_prefix("cycle="))?.parse().ok()?;
            Some((pr, cycle))
        })
        .collect()
}

// 10. Deterministic artifacts and crash-safe resume.
fn criterion_10(w: &Option<World>) -> Outcome {
    let w = world(w)?;
    let other = w.root.join("home-a2");
    let tasks = pipeline_cli(&other, &w.calc.config)?;
    ensure!(tasks == w.calc_tasks, "second forge produced {tasks:?}");
    let rels = ["tasks", "mined/calc.jsonl", "validated/calc.admitted.jsonl"];
    let (a, b) = (tree_bytes(&w.calc_home, &rels), tree_bytes(&other, &rels));
    let differing: Vec<&String> = a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).collect();
    ensure!(!a.is_empty() && differing.is_empty(), "artifacts differ: {differing:?}");

    let task = &w.calc_tasks[0];
    let log = w.root.join("resume-turns.log");
    let run_id = "resume-check";
    let manifest = w.calc_home.join("runs").join(run_id).join("manifest.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_chainforge"))
        .arg("--home").arg(&w.calc_home)
        .arg("--config").arg(&w.calc.config)
        .args(["run", "--task", task, "--setting", "global", "--agent", "scripted:gold", "--run-id", run_id, "--sleep-on-turn", "1500", "--turn-log"])
        .arg(&log)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let deadline = Instant::now() + Duration::from_secs(120);
    let done_before = loop {
        if let Ok(rec) = store::read_json::<RunRecord>(&manifest) {
            if rec.totals.cycles >= 2 {
                break rec;
            }
        }
        if Instant::now() > deadline || child.try_wait().map_err(|e| e.to_string())?.is_some() {
            let _ = child.kill();
            return Err("run finished or stalled before it could be interrupted".into());
        }
        std::thread::sleep(Duration::from_millis(100));
    };
    child.kill().map_err(|e| e.to_string())?;
    child.wait().map_err(|e| e.to_string())?;
    let killed: RunRecord = store::read_json(&manifest).map_err(|e| e.to_string())?;
    ensure!(killed.status == RunStatus::Running, "killed run status {:?}", killed.status);
    ensure!(killed.totals.cycles >= done_before.totals.cycles, "manifest went backwards");
    let completed: Vec<(usize, usize)> = killed.prs.iter().flat_map(|p| p.cycles.iter().map(move |c| (p.ordinal, c.index))).collect();
    let last_digest = killed.prs.iter().flat_map(|p| p.cycles.iter()).last().map(|c| c.tree_digest.clone()).ok_or("no cycle recorded")?;

    let v = run_json(&w.calc_home, &w.calc.config, &["--task", task, "--setting", "global", "--agent", "scripted:gold", "--run-id", run_id, "--resume", "--turn-log", log.to_str().unwrap()])?;
    let rec = record(&v)?;
    ensure!(rec.status == RunStatus::Completed && rec.task_success, "resumed run {:?}", rec.status);
    let turns = turn_log(&log);
    for pair in &completed {
        let seen = turns.iter().filter(|t| *t == pair).count();
        ensure!(seen == 1, "cycle {pair:?} ran {seen} times");
    }
    let resume = rec.resumes.first().ok_or("no resume event recorded")?;
    ensure!(resume.tree_digest == last_digest, "resume digest {} vs {last_digest}", resume.tree_digest);
    Ok(format!("{} artifact files byte-identical; resumed after {} completed cycles without repeating any", a.len(), completed.len()))
}

fn main() {
    let mut state: Option<World> = None;
    let mut results: Vec<(usize, &str, Outcome, Duration)> = Vec::new();
    let mut record_result = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let elapsed = t.elapsed();
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        println!("criterion {n:>2} {tag} {name}: {detail} [{:.1}s]", elapsed.as_secs_f64());
        results.push((n, name, r, elapsed));
    };
    record_result(1, "pipeline round trip", &mut || criterion_1(&mut state));
    record_result(2, "gold agent in every setting", &mut || criterion_2(&state));
    record_result(3, "breaker: individual beats global", &mut || criterion_3(&state));
    record_result(4, "budget ceilings", &mut || criterion_4(&state));
    record_result(5, "cascade algebra", &mut criterion_5);
    record_result(6, "anti-cheat", &mut || criterion_6(&state));
    record_result(7, "scoring and aggregation", &mut criterion_7);
    record_result(8, "complexity oracle", &mut criterion_8);
    record_result(9, "relative-position binning", &mut criterion_9);
    record_result(10, "determinism and resume", &mut || criterion_10(&state));
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
