use std::path::PathBuf;
use std::sync::Arc;

use chainforge::fixtures::FixtureSpec;
use chainforge::git::Git;
use chainforge::miner::discovery::PytestDiscovery;
use chainforge::miner::symbols::ExtractorRegistry;
use chainforge::miner::{EvaluationWindow, Miner, RepositoryRef};
use chainforge::pathrules::{PathClasses, PathRuleConfig};
use chainforge::sandbox::host::HostProvider;
use chainforge::sandbox::{RunnerProfile, SandboxSpec};
use chainforge::validate::{admit, ExclusionReason, PruneReason, Validator, Verdict};
use chrono::TimeZone;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn repo_a_mines_six_and_admits_four() {
    let dir = tempfile::tempdir().unwrap();
    let built = FixtureSpec::load(&fixture("repo_a.toml")).unwrap().build(dir.path()).unwrap();
    let classes = PathClasses::compile(&PathRuleConfig::default()).unwrap();
    let miner = Miner {
        git: Git::open(&built.repo).unwrap(),
        repo: RepositoryRef {
            name: "calc".into(),
            root_path: built.repo.clone(),
            default_branch: "main".into(),
            test_path_rules: PathRuleConfig::default().test,
        },
        classes: classes.clone(),
        extractors: ExtractorRegistry::default(),
        discovery: Arc::new(PytestDiscovery::default()),
        metadata: None,
        classifier: None,
    };
    let window = EvaluationWindow::new(
        chrono::Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        chrono::Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
    )
    .unwrap();
    let mined = miner.mine(&window, 2000).unwrap();
    assert!(mined.skipped.is_empty(), "{:?}", mined.skipped);
    let numbers: Vec<u64> = mined.records.iter().map(|r| r.pr_number).collect();
    assert_eq!(numbers, vec![101, 102, 103, 104, 105, 106]);
    for r in &mined.records {
        assert!(r.flags.is_empty(), "{} {:?}", r.pr_number, r.flags);
    }

    let validator = Validator {
        provider: Arc::new(HostProvider::default()),
        spec: SandboxSpec::default(),
        profile: RunnerProfile::default(),
        repo: built.repo.clone(),
        classes,
        policy: Default::default(),
        log_root: None,
    };
    let reports = validator.validate_all(&mined.records).unwrap();
    let verdicts: Vec<(u64, Verdict, Option<ExclusionReason>)> =
        reports.iter().map(|r| (r.pr_number, r.verdict, r.exclusion_reason)).collect();
    assert_eq!(
        verdicts,
        vec![
            (101, Verdict::Admitted, None),
            (102, Verdict::Excluded, Some(ExclusionReason::DocsOrInfraOnly)),
            (103, Verdict::Admitted, None),
            (104, Verdict::Excluded, Some(ExclusionReason::EmptyAfterPruning)),
            (105, Verdict::Admitted, None),
            (106, Verdict::Admitted, None),
        ]
    );
    assert_eq!(reports[3].pruned_f2p[0].reason, PruneReason::Flaky);
    for (rec, rep) in mined.records.iter().zip(&reports) {
        if let Some(admitted) = admit(rec, rep) {
            assert!(validator.replay_admitted(&admitted).unwrap(), "replay {}", rec.pr_number);
        }
    }
}
