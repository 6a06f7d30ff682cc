//! Experiment orchestration: scenario configs, the simulation loop, log files,
//! metrics and the command-line interface.

mod cli;
mod config;
mod evaluate;
mod logs;
mod run;

pub use cli::{main_with_args, Cli, Command};
pub use config::{EvaluationConfig, MotionConfig, ScenarioConfig, SensorConfig, StartConfig, PRESETS};
pub use evaluate::{evaluate, RunMetrics};
pub use logs::{
    control_header, detector_header, fmt_f64, read_control_log, read_dataset, read_detector_log, read_prediction_log,
    write_control_log, write_dataset, write_detector_log, write_prediction_log, ControlRow, DetectorRow, PredictionRow,
};
pub use run::{
    calibrate, collect_training_data, detector_samples, initial_state, load_models, plot_rows, run_scenario,
    write_json, write_training_data, Fault, RunOutput,
};
