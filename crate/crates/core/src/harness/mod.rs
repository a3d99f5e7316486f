//! Experiment plumbing: configuration files, checkpoints, metrics, held-out
//! evaluation, interpretability exports and multi-mode comparisons.

mod checkpoint;
mod config;
mod export;
mod metrics;
mod run;
mod stats;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ExperimentConfig;
pub use export::{
    cross_link_matrix, export_episodes, export_interpretability, family_mean_heatmaps, heatmap_csv, meta_graph,
    meta_graph_edges, Edge, ExportReport, MetaGraphExport,
};
pub use metrics::{MetricsRow, MetricsWriter, METRICS_HEADER, TIMING_HEADER};
pub use run::{
    compare, eval_checkpoint, evaluate_summary, format_table, out_root, train, train_until, variant_label, CompareRow,
    TrainReport, COMPARE_HEADER, OUT_ENV,
};
pub use stats::{mean_ci95, EvalSummary};
