//! Experiment harness behind the command-line tool: dataset generation,
//! training, prediction and closed-loop evaluation, ablations and reports.

mod commands;
mod config;
mod manifest;
mod metrics;
mod plot;

pub use commands::{
    ablate, checkpoint_path, data_path, derive_seed, eval_prediction, evaluate_stream, fit_model, generate_data,
    load_splits, report, run_all, run_scenario, scenario_cells, split_contiguous, train_command, Cell, ReportOutput,
    ReportRow, ScenarioFilter, Splits, StreamEval, TrainSummary, METHODS,
};
pub use config::{AblationConfig, DataConfig, ExperimentConfig, PredictionConfig, Preset, ScenarioConfig};
pub use manifest::{sha256_file, CommandEntry, Manifest, MANIFEST_FILE};
pub use metrics::{median, quantile, r2_mean, rmse, MetricsReport, RunMetrics, SummaryRow};
pub use plot::lines as line_plot;
