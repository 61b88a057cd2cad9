//! Command implementations and validation experiments behind the CLI.

mod commands;
mod config;
mod experiments;
pub mod stats;

pub use commands::{
    cmd_score, cmd_simulate, cmd_train, loss_table, score_table, training_rows, SimulateOutput, CAMERA_FILE,
    DATASET_FILE, LOSS_FILE, SCORES_FILE,
};
pub use config::Config;
pub use experiments::{
    far_outliers, run_ensemble_sweep, run_insilico, run_insilico_experiment, run_scene_change_experiment,
    ExperimentReport, InsilicoRun, SceneChangeSeries, SweepRow, EXTREME_FRACTION,
};
pub use stats::{auroc, detect_changepoint, signed_log, WaicSummary};
