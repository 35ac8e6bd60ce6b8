//! Consistency-aware scoring of completed runs.

mod render;
mod report;
mod taxonomy;

pub use render::{render_pure_skill_table, render_report, write_report, ReportFormat};
pub use report::{
    accuracy, build_report, kld_uniform, kld_uniform_base, lucky_rate_for, pure_skill, selection_rate,
    ssd_selection_rate, MetricReport, SelectionRates,
};
pub use taxonomy::{
    aggregate, answer_metrics, classify_item, distractor_metrics, majority_threshold, FamilyScores,
    ItemClass, TaxonomyCounts,
};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("expected {expected} trials, got {found}")]
    WrongTrialCount { expected: usize, found: usize },
    #[error("incomplete run: {0}")]
    IncompleteRun(String),
    #[error("run has no scored trials")]
    EmptyRun,
    #[error("run does not record SSD slots")]
    MissingSsdSlots,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
