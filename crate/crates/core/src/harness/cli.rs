use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use super::config::ScenarioConfig;
use super::evaluate::evaluate;
use super::logs::{read_control_log, read_dataset, read_detector_log, read_prediction_log};
use super::run::{calibrate, detector_samples, load_models, plot_rows, run_scenario, write_json, write_training_data};
use crate::detector::grow_ensemble;
use crate::error::{Error, Result};
use crate::model::{train, ModelParams};

#[derive(Debug, Parser)]
#[command(name = "compliance-lab", version, about = "Anomaly-triggered adaptive force-impedance control in simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario TOML file or preset name.
    #[arg(long, default_value = "wiping_flat")]
    pub config: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario and training seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model files or directories of `model_*.json`; replaces the config's list.
    #[arg(long, num_args = 1..)]
    pub models: Vec<PathBuf>,
    /// Treat near-singular arm configurations as faults.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write control, detector and prediction logs.
    Simulate(Common),
    /// Run a clean high-stiffness execution and write dataset.csv.
    Collect(Common),
    /// Train one predictive model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train a model on the adaptive/recovery windows of a flagged run and add it to the ensemble.
    Grow {
        #[command(flatten)]
        common: Common,
        /// Directory holding the flagged run's control.csv.
        #[arg(long)]
        log: PathBuf,
    },
    /// Score a clean run and write threshold.json.
    Calibrate(Common),
    /// Recompute metrics.json from a run's logs.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: PathBuf,
    },
    /// Join a run's logs into plot.csv.
    PlotData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: PathBuf,
    },
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig> {
        let mut c = ScenarioConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            c.seed = seed;
            c.training.seed = seed;
        }
        if self.strict {
            c.controller.singularity.strict = true;
        }
        if !self.models.is_empty() {
            c.models = expand_model_paths(&self.models)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}

/// Directories expand to their `model_<i>.json` files in index order.
fn expand_model_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<(usize, PathBuf)> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|entry| {
                    let path = entry.ok()?.path();
                    let stem = path.file_name()?.to_str()?.strip_prefix("model_")?.strip_suffix(".json")?.to_owned();
                    Some((stem.parse().ok()?, path))
                })
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no model_<i>.json files")));
            }
            out.extend(found.into_iter().map(|(_, path)| path));
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "model file not found")));
        }
    }
    Ok(out)
}

fn save_ensemble(dir: &Path, models: &[ModelParams]) -> Result<Vec<String>> {
    models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let path = dir.join(format!("model_{i}.json"));
            m.save(&path)?;
            Ok(path.display().to_string())
        })
        .collect()
}

fn execute(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Simulate(common) => {
            let config = common.scenario()?;
            let models = load_models(&config.models)?;
            let run = run_scenario(&config, &models)?;
            let out = common.out_dir()?;
            run.write(out)?;
            if let Some(f) = &run.fault {
                return Err(Error::SimFault {
                    t: f.tick as f64 * config.dt_s,
                    reason: format!("{} (logs written to {})", f.message, out.display()),
                });
            }
            Ok(run.summary())
        }
        Command::Collect(common) => {
            let config = common.scenario()?;
            let path = common.out_dir()?.join("dataset.csv");
            let (samples, windows) = write_training_data(&config, &path)?;
            Ok(json!({ "dataset": path.display().to_string(), "samples": samples, "windows": windows }))
        }
        Command::Train { common, dataset } => {
            let config = common.scenario()?;
            let (windows, len) = read_dataset(&dataset)?;
            let (model, report) = train(&windows, len, 3, 2, &config.training)?;
            let out = common.out_dir()?;
            let paths = save_ensemble(out, std::slice::from_ref(&model))?;
            write_json(&out.join("train_report.json"), &report)?;
            Ok(json!({ "models": paths, "windows": windows.len(), "final_nll": report.final_nll }))
        }
        Command::Grow { common, log } => {
            let config = common.scenario()?;
            let models = load_models(&config.models)?;
            let control = read_control_log(&log.join("control.csv"))?;
            let samples = detector_samples(&control, config.detector.decimation, &config.perturbations);
            let mut training = config.training;
            training.seed = training.seed.wrapping_add(models.len() as u64);
            let (grown, report) = grow_ensemble(models, &samples, config.detector.window_len, &training)?;
            let out = common.out_dir()?;
            let paths = save_ensemble(out, &grown)?;
            write_json(&out.join("grow_report.json"), &report)?;
            Ok(json!({ "models": paths, "final_nll": report.final_nll }))
        }
        Command::Calibrate(common) => {
            let config = common.scenario()?;
            let models = load_models(&config.models)?;
            let (calibration, _) = calibrate(&config, &models)?;
            let path = common.out_dir()?.join("threshold.json");
            write_json(&path, &calibration)?;
            Ok(json!({ "threshold_file": path.display().to_string(), "calibration": calibration }))
        }
        Command::Evaluate { common, log } => {
            let config = common.scenario()?;
            let control = read_control_log(&log.join("control.csv"))?;
            let detector = read_detector_log(&log.join("detector.csv"))?;
            let metrics = evaluate(&control, &detector, &config.perturbations, &config.evaluation, config.dt_s)?;
            let path = common.out_dir()?.join("metrics.json");
            write_json(&path, &metrics)?;
            Ok(json!({ "metrics": metrics }))
        }
        Command::PlotData { common, log } => {
            let config = common.scenario()?;
            let control = read_control_log(&log.join("control.csv"))?;
            let detector = read_detector_log(&log.join("detector.csv"))?;
            let pred_path = log.join("prediction.csv");
            let prediction = if pred_path.is_file() { read_prediction_log(&pred_path)? } else { Vec::new() };
            let (header, rows) = plot_rows(&control, &detector, &prediction, config.dt_s)?;
            let path = common.out_dir()?.join("plot.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e))?;
            w.write_record(&header).map_err(|e| Error::format(&path, e))?;
            for r in &rows {
                w.write_record(r).map_err(|e| Error::format(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(json!({ "plot": path.display().to_string(), "rows": rows.len() }))
        }
    }
}

/// Parse `args`, run the subcommand and print its summary as JSON.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).unwrap_or_default();
            // a closed stdout is not an error of the run
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
