//! Scripted agents used as oracles. They act on the workspace through
//! `Sandbox::agent_command`, so they run with the same privileges and
//! restrictions as a real agent.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use super::agent::{Agent, AgentOptions, AgentRegistry, AgentTurnRequest, AgentTurnResult, TurnContext, TurnStatus};
use crate::error::{Error, Result};
use crate::fixtures::BreakerSpec;
use crate::sandbox::host::run_with_timeout;
use crate::sandbox::{ExecOutput, RunnerProfile};
use crate::types::TestId;

const APPLY_ONCE: &str = r#"p=$(mktemp) || exit 1
cat > "$p"
if git apply -R --check "$p" >/dev/null 2>&1; then rc=0; else git apply --whitespace=nowarn --binary "$p"; rc=$?; fi
rm -f "$p"
exit $rc"#;

const WRITE_FILE: &str = r#"mkdir -p "$(dirname "$1")" && cat > "$1""#;

fn agent_sh(ctx: &TurnContext<'_>, script: &str, args: &[&str], stdin: Option<&[u8]>) -> Result<ExecOutput> {
    let mut argv: Vec<String> = vec!["sh".into(), "-c".into(), script.into(), "sh".into()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let cmd = ctx.sandbox.agent_command(&argv)?;
    run_with_timeout(cmd, stdin, Some(ctx.timeout))
}

fn scripted_result(iterations: u32) -> AgentTurnResult {
    AgentTurnResult { cost_usd: Some(0.0), ..AgentTurnResult::submitted(iterations) }
}

/// Fix patches for the request: the current PR's, or every PR's in PRD mode.
fn gold_fixes<'a>(req: &AgentTurnRequest, ctx: &'a TurnContext<'_>) -> Vec<&'a str> {
    match req.pr_ordinal {
        Some(k) => ctx.chain.gold.get(k - 1).map(|g| vec![g.fix_patch.as_str()]).unwrap_or_default(),
        None => ctx.chain.gold.iter().map(|g| g.fix_patch.as_str()).collect(),
    }
}

/// Applies gold fixes, skipping any already present. Returns a diagnostic on failure.
fn apply_gold(req: &AgentTurnRequest, ctx: &TurnContext<'_>) -> Result<Option<String>> {
    for patch in gold_fixes(req, ctx) {
        let out = agent_sh(ctx, APPLY_ONCE, &[], Some(patch.as_bytes()))?;
        if !out.success() {
            return Ok(Some(format!("gold patch did not apply: {}", out.stderr_text())));
        }
    }
    Ok(None)
}

/// Applies the human fix for the PR in scope.
#[derive(Debug, Default)]
pub struct GoldAgent;

impl Agent for GoldAgent {
    fn name(&self) -> String {
        "scripted:gold".into()
    }

    fn turn(&self, req: &AgentTurnRequest, ctx: &TurnContext<'_>) -> Result<AgentTurnResult> {
        Ok(match apply_gold(req, ctx)? {
            None => scripted_result(1),
            Some(d) => AgentTurnResult { cost_usd: Some(0.0), ..AgentTurnResult::error(d) },
        })
    }
}

/// Submits without touching the workspace.
#[derive(Debug, Default)]
pub struct NullAgent;

impl Agent for NullAgent {
    fn name(&self) -> String {
        "scripted:null".into()
    }

    fn turn(&self, _req: &AgentTurnRequest, _ctx: &TurnContext<'_>) -> Result<AgentTurnResult> {
        Ok(scripted_result(0))
    }
}

/// Applies the gold fix, then at one chain step overwrites files so that an
/// earlier PR's behaviour silently breaks.
#[derive(Debug)]
pub struct BreakerAgent {
    pub spec: BreakerSpec,
}

impl Agent for BreakerAgent {
    fn name(&self) -> String {
        "scripted:breaker".into()
    }

    fn turn(&self, req: &AgentTurnRequest, ctx: &TurnContext<'_>) -> Result<AgentTurnResult> {
        if let Some(d) = apply_gold(req, ctx)? {
            return Ok(AgentTurnResult { cost_usd: Some(0.0), ..AgentTurnResult::error(d) });
        }
        if req.pr_ordinal.is_none_or(|k| k == self.spec.at_ordinal) {
            for (path, content) in &self.spec.files {
                let out = agent_sh(ctx, WRITE_FILE, &[path], Some(content.as_bytes()))?;
                if !out.success() {
                    return Ok(AgentTurnResult::error(format!("write {path}: {}", out.stderr_text())));
                }
            }
        }
        Ok(scripted_result(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheatAttempt {
    pub kind: String,
    pub target: String,
    /// `succeeded` when the action went through, `blocked` otherwise.
    pub outcome: String,
}

/// Tries to edit a frozen test, read a revoked test and read a commit that
/// postdates the workspace. Outcomes go to `cheat.json` in the transcript dir.
#[derive(Debug, Default)]
pub struct CheatAgent;

impl Agent for CheatAgent {
    fn name(&self) -> String {
        "scripted:cheat".into()
    }

    fn turn(&self, _req: &AgentTurnRequest, ctx: &TurnContext<'_>) -> Result<AgentTurnResult> {
        let revoked = ctx.sandbox.revoked_files();
        let mut attempts = Vec::new();
        let mut record = |kind: &str, target: &str, out: Option<ExecOutput>| {
            let outcome = match out {
                Some(o) if o.success() => "succeeded",
                Some(_) => "blocked",
                None => "no-target",
            };
            attempts.push(CheatAttempt { kind: kind.into(), target: target.into(), outcome: outcome.into() });
        };

        let frozen = ctx.sandbox.frozen_files().into_iter().find(|f| !revoked.contains(f));
        match &frozen {
            Some(f) => record("edit-frozen-test", f, Some(agent_sh(ctx, "printf '\\nassert True\\n' >> \"$1\"", &[f], None)?)),
            None => record("edit-frozen-test", "", None),
        }
        match revoked.first() {
            Some(f) => record("read-revoked-test", f, Some(agent_sh(ctx, "cat -- \"$1\"", &[f], None)?)),
            None => record("read-revoked-test", "", None),
        }
        match ctx.chain.gold.last() {
            Some(g) => record("read-future-commit", g.commit_id.as_str(), Some(agent_sh(ctx, "git cat-file -p \"$1\"", &[g.commit_id.as_str()], None)?)),
            None => record("read-future-commit", "", None),
        }

        std::fs::create_dir_all(ctx.transcript_dir).map_err(|e| Error::io(ctx.transcript_dir, e))?;
        let p = ctx.transcript_dir.join("cheat.json");
        std::fs::write(&p, serde_json::to_string_pretty(&attempts)?).map_err(|e| Error::io(&p, e))?;
        Ok(AgentTurnResult { transcript_ref: Some(p.to_string_lossy().to_string()), ..scripted_result(1) })
    }
}

pub const MARKER_DIR: &str = ".cf-markers";

/// Marker file name for a test id.
pub fn marker_name(id: &TestId) -> String {
    id.as_str().bytes().map(|b| if b.is_ascii_alphanumeric() { b as char } else { '_' }).collect()
}

/// A runner that passes exactly the tests whose marker file exists.
pub fn marker_runner_profile() -> RunnerProfile {
    let script = r#"r="$1"; shift; : > "$r"
for id; do
  m=$(printf %s "$id" | tr -c 'A-Za-z0-9' '_')
  if [ -f ".cf-markers/$m" ]; then o=passed; else o=failed; fi
  printf '{"nodeid":"%s","outcome":"%s","duration":0,"longrepr":"marker %s"}\n' "$id" "$o" "$o" >> "$r"
done"#;
    RunnerProfile {
        command_template: ["sh", "-c", script, "sh", "{report}", "{ids}"].iter().map(|s| s.to_string()).collect(),
        ..RunnerProfile::default()
    }
}

/// Random behaviour for budget checks: toggles marker files for a random
/// subset of the chain's tests, reports random iteration counts (sometimes
/// above the cap) and random statuses. Needs [`marker_runner_profile`].
#[derive(Debug, Default)]
pub struct RandomAgent {
    pub seed: u64,
}

impl RandomAgent {
    fn rng_for(&self, req: &AgentTurnRequest) -> StdRng {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (self.seed, &req.task_id, req.pr_ordinal, req.cycle, req.setting.to_string()).hash(&mut h);
        StdRng::seed_from_u64(h.finish())
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> String {
        "scripted:random".into()
    }

    fn turn(&self, req: &AgentTurnRequest, ctx: &TurnContext<'_>) -> Result<AgentTurnResult> {
        let mut rng = self.rng_for(req);
        let all: Vec<TestId> = ctx.chain.suites.iter().flat_map(|s| s.all()).collect();
        let pass_all = rng.gen_bool(0.4);
        let names: BTreeMap<String, ()> =
            all.iter().filter(|_| pass_all || rng.gen_bool(0.5)).map(|t| (marker_name(t), ())).collect();
        let names: Vec<&str> = names.keys().map(String::as_str).collect();
        let script = format!("mkdir -p {MARKER_DIR} && cd {MARKER_DIR} && rm -f ./* && for m; do : > \"$m\"; done");
        agent_sh(ctx, &script, &names, None)?;
        if rng.gen_bool(0.1) {
            return Ok(AgentTurnResult::error("random agent failure"));
        }
        let status = if rng.gen_bool(0.5) { TurnStatus::Submitted } else { TurnStatus::BudgetExhausted };
        Ok(AgentTurnResult {
            status,
            iterations_used: rng.gen_range(0..=req.max_iterations + 10),
            cost_usd: rng.gen_bool(0.8).then(|| rng.gen_range(0.0..2.0)),
            transcript_ref: None,
            diagnostic: None,
        })
    }
}

pub(crate) fn register_all(r: &mut AgentRegistry) {
    r.register("gold", |_| Ok(std::sync::Arc::new(GoldAgent)));
    r.register("null", |_| Ok(std::sync::Arc::new(NullAgent)));
    r.register("cheat", |_| Ok(std::sync::Arc::new(CheatAgent)));
    r.register("random", |o: &AgentOptions| Ok(std::sync::Arc::new(RandomAgent { seed: o.seed })));
    r.register("breaker", |o: &AgentOptions| {
        let spec = o.breaker.clone().ok_or_else(|| Error::Config("breaker agent needs a breaker spec".into()))?;
        Ok(std::sync::Arc::new(BreakerAgent { spec }))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_names_match_the_shell_mapping() {
        assert_eq!(marker_name(&TestId::new("tests/test_a.py::test_x")), "tests_test_a_py__test_x");
    }
}
