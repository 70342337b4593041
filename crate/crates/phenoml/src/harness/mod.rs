pub mod experiment;
pub mod metrics;
pub mod report;

pub use experiment::{
    load_experiment_cohort, run_experiment, summarize, CohortSource, EnsembleChoice,
    ExperimentConfig, FoldMetrics, MetricSummary, MetricsReport, ModelChoice,
};
pub use metrics::{precision_recall_f1, roc_auc, roc_auc_brute_force};
pub use report::{
    format_mean_std, read_report_file, render_csv, render_table, reports_from_json,
    reports_to_json, write_report_files, CSV_HEADER,
};
