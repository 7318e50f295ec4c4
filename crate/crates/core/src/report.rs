//! Summary tables over finished runs.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{PrStatus, RunRecord, RunStatus};
use crate::metrics::{aggregate, health_evolution, HealthSnapshot, SummaryRow, TaskScore};
use crate::store;

/// Health bins used for evolution tables.
pub const HEALTH_BINS: usize = 5;

/// Finds `manifest.json` under each given path (a run dir or a dir of runs).
pub fn find_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        let direct = p.join("manifest.json");
        if direct.is_file() {
            out.push(direct);
            continue;
        }
        let entries = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path().join("manifest.json")))
            .filter(|m| m.is_file())
            .collect();
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

pub fn load_runs(manifests: &[PathBuf]) -> Result<Vec<RunRecord>> {
    manifests.iter().map(|m| store::read_json(m)).collect()
}

/// Scored view of a finished run. PRs lost to infrastructure failures are
/// left out of the denominators; unfinished runs yield `None`.
pub fn task_score(rec: &RunRecord) -> Result<Option<TaskScore>> {
    if rec.status == RunStatus::Running {
        return Ok(None);
    }
    let mut rows = Vec::new();
    for pr in &rec.prs {
        if pr.status == PrStatus::InfrastructureFailed {
            continue;
        }
        let row = pr.eval.clone().ok_or_else(|| {
            Error::invalid("run record", format!("{}: PR {} has no evaluation row", rec.run_id, pr.ordinal))
        })?;
        rows.push(row);
    }
    Ok(Some(TaskScore {
        repo: rec.repo.clone(),
        task_id: rec.task_id.clone(),
        setting: rec.setting.mode.to_string(),
        agent: rec.agent.clone(),
        rows,
        task_success: rec.task_success,
        cost_usd: rec.totals.cost_usd,
    }))
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |c| format!("{c:.digits$}"))
}

#[derive(Debug, Serialize)]
struct SummaryCsv<'a> {
    setting: &'a str,
    agent: &'a str,
    scope: &'a str,
    pr_success_rate: String,
    prs_succeeded: u64,
    prs_total: u64,
    task_success_rate: String,
    tasks_succeeded: u64,
    tasks_total: u64,
    f2p_rate: String,
    p2p_rate: String,
    cost_known_tasks: usize,
    mean_cost_per_task_usd: String,
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    if rows.is_empty() {
        return Ok("setting,agent,scope,pr_success_rate,prs_succeeded,prs_total,task_success_rate,tasks_succeeded,tasks_total,f2p_rate,p2p_rate,cost_known_tasks,mean_cost_per_task_usd\n".into());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(SummaryCsv {
            setting: &r.setting,
            agent: &r.agent,
            scope: &r.scope,
            pr_success_rate: r.prs.to_string(),
            prs_succeeded: r.prs.num,
            prs_total: r.prs.den,
            task_success_rate: r.tasks.to_string(),
            tasks_succeeded: r.tasks.num,
            tasks_total: r.tasks.den,
            f2p_rate: r.f2p.to_string(),
            p2p_rate: r.p2p.to_string(),
            cost_known_tasks: r.cost_known_tasks,
            mean_cost_per_task_usd: opt(r.mean_cost_per_task, 4),
        })
        .map_err(csv_err)?;
    }
    finish(w)
}

#[derive(Debug, Serialize)]
struct RunCsv<'a> {
    run_id: &'a str,
    task_id: &'a str,
    repo: &'a str,
    setting: String,
    agent: &'a str,
    status: String,
    prs: usize,
    prs_succeeded: usize,
    task_success: bool,
    cycles: usize,
    iterations: u64,
    cost_usd: String,
    wall_time_s: String,
    integrity_events: usize,
    flags: String,
}

pub fn runs_csv(runs: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in runs {
        w.serialize(RunCsv {
            run_id: &r.run_id,
            task_id: &r.task_id,
            repo: &r.repo,
            setting: r.setting.mode.to_string(),
            agent: &r.agent,
            status: serde_json::to_value(r.status)?.as_str().unwrap_or_default().to_string(),
            prs: r.prs.len(),
            prs_succeeded: r.prs.iter().filter(|p| p.pr_success).count(),
            task_success: r.task_success,
            cycles: r.totals.cycles,
            iterations: r.totals.iterations,
            cost_usd: opt(r.totals.cost_usd, 4),
            wall_time_s: format!("{:.1}", r.totals.wall_time_s),
            integrity_events: r.integrity.events.len(),
            flags: r.flags.join("; "),
        })
        .map_err(csv_err)?;
    }
    finish(w)
}

#[derive(Debug, Serialize)]
struct BinCsv<'a> {
    run_id: &'a str,
    task_id: &'a str,
    setting: String,
    agent: &'a str,
    trace: String,
    vs: String,
    bin: usize,
    d_complexity: i64,
    d_sqale_minutes: i64,
}

/// Health deltas per bin for every run that carries snapshots.
pub fn bins_csv(runs: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    // Header even when no run has health data.
    let mut wrote = false;
    for r in runs {
        let Some(base) = &r.base_health else { continue };
        let n = r.prs.len();
        let agent: Vec<(usize, HealthSnapshot)> =
            r.prs.iter().filter_map(|p| p.health.clone().map(|h| (p.ordinal, h))).collect();
        let gold: Vec<(usize, HealthSnapshot)> = r.gold_health.iter().cloned().enumerate().map(|(i, h)| (i + 1, h)).collect();
        let ev = health_evolution(&agent, &gold, base, n, HEALTH_BINS);
        for d in &ev.deltas {
            w.serialize(BinCsv {
                run_id: &r.run_id,
                task_id: &r.task_id,
                setting: r.setting.mode.to_string(),
                agent: &r.agent,
                trace: serde_json::to_value(d.trace)?.as_str().unwrap_or_default().to_string(),
                vs: serde_json::to_value(d.vs)?.as_str().unwrap_or_default().to_string(),
                bin: d.bin,
                d_complexity: d.d_complexity,
                d_sqale_minutes: d.d_sqale_minutes,
            })
            .map_err(csv_err)?;
            wrote = true;
        }
    }
    if !wrote {
        return Ok("run_id,task_id,setting,agent,trace,vs,bin,d_complexity,d_sqale_minutes\n".into());
    }
    finish(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid("csv", e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid("csv", e.to_string()))
}

#[derive(Debug, Default)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub runs: Vec<RunRecord>,
    /// Run ids left out of the summary because they are unfinished.
    pub unfinished: Vec<String>,
}

/// Scores every finished run and aggregates them.
pub fn build_report(runs: Vec<RunRecord>) -> Result<Report> {
    let mut scores = Vec::new();
    let mut unfinished = Vec::new();
    for r in &runs {
        match task_score(r)? {
            Some(s) => scores.push(s),
            None => unfinished.push(r.run_id.clone()),
        }
    }
    let summary = if scores.is_empty() { vec![] } else { aggregate(&scores)? };
    Ok(Report { summary, runs, unfinished })
}

/// Writes summary.csv, summary.json, runs.csv and bins.csv into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    let files = [
        ("summary.csv", summary_csv(&report.summary)?.into_bytes()),
        ("summary.json", store::to_json_bytes(&report.summary)?),
        ("runs.csv", runs_csv(&report.runs)?.into_bytes()),
        ("bins.csv", bins_csv(&report.runs)?.into_bytes()),
    ];
    let mut out = Vec::new();
    for (name, data) in files {
        let p = dir.join(name);
        store::write_atomic(&p, &data)?;
        out.push(p);
    }
    Ok(out)
}
