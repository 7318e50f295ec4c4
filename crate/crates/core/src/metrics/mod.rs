//! Scoring and repository-health metrics.

pub mod complexity;
pub mod health;
pub mod score;

pub use complexity::{analyze_source, cognitive_complexity};
pub use health::{
    bin_of, gold_trace, health_evolution, health_snapshot, Analyzer, AnalyzerConfig, AnalyzerRegistry, Evolution,
    HealthDelta, HealthSnapshot, SnapshotAt,
};
pub use score::{aggregate, score_pr, score_task, EvalRow, Rate, SummaryRow, TaskScore};
