//! Functional-correctness scoring and aggregation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::VerificationSuite;
use crate::sandbox::SuiteReport;
use crate::types::TestId;

/// Per-PR scoring row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRow {
    pub f2p_passed: usize,
    pub f2p_total: usize,
    pub p2p_passed: usize,
    pub p2p_total: usize,
    pub pr_success: bool,
    /// Suite ids absent from the report; counted as failed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<TestId>,
    #[serde(default)]
    pub cycles_used: usize,
    #[serde(default)]
    pub cost_usd: Option<f64>,
}

impl EvalRow {
    pub fn check(&self) -> Result<()> {
        let expected = self.f2p_passed == self.f2p_total && self.p2p_passed == self.p2p_total;
        if self.f2p_passed > self.f2p_total || self.p2p_passed > self.p2p_total || self.pr_success != expected {
            return Err(Error::invalid("eval row", format!("inconsistent counts {self:?}")));
        }
        Ok(())
    }
}

/// Scores one PR: passed means status `passed`; skipped and missing ids
/// count against it.
pub fn score_pr(report: &SuiteReport, suite: &VerificationSuite) -> EvalRow {
    let statuses = report.status_map();
    let mut missing = Vec::new();
    let mut count = |ids: &[TestId]| {
        ids.iter()
            .filter(|id| match statuses.get(*id) {
                Some(s) => s.is_pass(),
                None => {
                    missing.push((*id).clone());
                    false
                }
            })
            .count()
    };
    let f2p_passed = count(&suite.fail_to_pass);
    let p2p_passed = count(&suite.pass_to_pass);
    let (f2p_total, p2p_total) = (suite.fail_to_pass.len(), suite.pass_to_pass.len());
    EvalRow {
        f2p_passed,
        f2p_total,
        p2p_passed,
        p2p_total,
        pr_success: f2p_passed == f2p_total && p2p_passed == p2p_total,
        missing,
        cycles_used: 0,
        cost_usd: None,
    }
}

pub fn score_task(rows: &[EvalRow]) -> Result<bool> {
    if rows.is_empty() {
        return Err(Error::EmptyChain);
    }
    Ok(rows.iter().all(|r| r.pr_success))
}

/// An exact ratio rendered as a percentage with two decimals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub num: u64,
    pub den: u64,
}

impl Rate {
    pub fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    /// Hundredths of a percent, rounded half up; `None` for an empty denominator.
    pub fn hundredths(&self) -> Option<u64> {
        (self.den > 0).then(|| ((self.num as u128 * 20_000 + self.den as u128) / (2 * self.den as u128)) as u64)
    }

    pub fn add(self, other: Rate) -> Rate {
        Rate::new(self.num + other.num, self.den + other.den)
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hundredths() {
            Some(h) => write!(f, "{}.{:02}", h / 100, h % 100),
            None => f.write_str("n/a"),
        }
    }
}

/// One scored task run, the unit of aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub repo: String,
    pub task_id: String,
    pub setting: String,
    pub agent: String,
    pub rows: Vec<EvalRow>,
    pub task_success: bool,
    pub cost_usd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: String,
    pub agent: String,
    /// Repository name, or `overall`.
    pub scope: String,
    pub prs: Rate,
    pub tasks: Rate,
    pub f2p: Rate,
    pub p2p: Rate,
    pub cost_known_tasks: usize,
    pub mean_cost_per_task: Option<f64>,
}

impl SummaryRow {
    pub fn pr_success_rate(&self) -> String {
        self.prs.to_string()
    }
}

#[derive(Default)]
struct Acc {
    prs: Rate,
    tasks: Rate,
    f2p: Rate,
    p2p: Rate,
    costs: Vec<f64>,
}

impl Acc {
    fn add(&mut self, t: &TaskScore) {
        for r in &t.rows {
            self.prs = self.prs.add(Rate::new(u64::from(r.pr_success), 1));
            self.f2p = self.f2p.add(Rate::new(r.f2p_passed as u64, r.f2p_total as u64));
            self.p2p = self.p2p.add(Rate::new(r.p2p_passed as u64, r.p2p_total as u64));
        }
        self.tasks = self.tasks.add(Rate::new(u64::from(t.task_success), 1));
        if let Some(c) = t.cost_usd {
            self.costs.push(c);
        }
    }

    fn row(&self, setting: &str, agent: &str, scope: &str) -> SummaryRow {
        SummaryRow {
            setting: setting.into(),
            agent: agent.into(),
            scope: scope.into(),
            prs: self.prs,
            tasks: self.tasks,
            f2p: self.f2p,
            p2p: self.p2p,
            cost_known_tasks: self.costs.len(),
            mean_cost_per_task: (!self.costs.is_empty()).then(|| self.costs.iter().sum::<f64>() / self.costs.len() as f64),
        }
    }
}

/// Per-repository and overall rows for every (setting, agent) pair.
pub fn aggregate(tasks: &[TaskScore]) -> Result<Vec<SummaryRow>> {
    if tasks.is_empty() {
        return Err(Error::invalid("aggregate", "no task records"));
    }
    let mut groups: BTreeMap<(&str, &str), BTreeMap<&str, Acc>> = BTreeMap::new();
    let mut overall: BTreeMap<(&str, &str), Acc> = BTreeMap::new();
    for t in tasks {
        let key = (t.setting.as_str(), t.agent.as_str());
        groups.entry(key).or_default().entry(t.repo.as_str()).or_default().add(t);
        overall.entry(key).or_default().add(t);
    }
    let mut out = Vec::new();
    for ((setting, agent), repos) in &groups {
        for (repo, acc) in repos {
            out.push(acc.row(setting, agent, repo));
        }
        out.push(overall[&(*setting, *agent)].row(setting, agent, "overall"));
    }
    Ok(out)
}
