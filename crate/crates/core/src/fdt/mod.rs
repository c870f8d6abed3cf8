//! Factorized dynamics transformer: variable-wise tokens, a short-window
//! context stream with a global token, long-window memory retrieval and a
//! multi-step residual decoder.

mod config;
mod model;
mod train;
mod window;

pub use config::{FdtConfig, Readout, Variant};
pub use model::{BatchOut, FdtModel, FdtNet, ResidualForecast};
pub use train::{
    evaluate_loss, multi_step_loss, timing_path, train, EpochRecord, TrainConfig, TrainLog, WindowDataset,
};
pub use window::{HistoryWindow, NormStats};
