use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, TaskTargets};
use crate::detector::{Calibration, DetectorConfig};
use crate::dynamics::{ArmParams, ContactParams, PerturbationEvent, SurfaceModel};
use crate::error::{Error, Result};
use crate::model::TrainingConfig;
use crate::motion::{learn_vmp, load_demo_csv, wiping_stroke, PrimitiveMode, ViaPointMp};

/// Built-in scenarios, selectable by name wherever a config path is expected.
pub const PRESETS: &[(&str, &str)] = &[
    ("wiping_flat", include_str!("../../presets/wiping_flat.toml")),
    ("slope", include_str!("../../presets/slope.toml")),
    ("step", include_str!("../../presets/step.toml")),
    ("arc", include_str!("../../presets/arc.toml")),
    ("collision", include_str!("../../presets/collision.toml")),
    ("drag", include_str!("../../presets/drag.toml")),
    ("interruption", include_str!("../../presets/interruption.toml")),
    ("payload_collision", include_str!("../../presets/payload_collision.toml")),
];

/// Source of the wiping motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionConfig {
    /// Sinusoidal stroke along `direction` in the surface tangent.
    Stroke {
        direction: [f64; 2],
        amplitude_m: f64,
        period_s: f64,
        #[serde(default = "default_rbf")]
        n_rbf: usize,
    },
    /// Primitive learned from a demonstration CSV (`t, dim_1, ...`).
    Demo {
        path: PathBuf,
        #[serde(default = "default_rbf")]
        n_rbf: usize,
        #[serde(default = "default_ridge")]
        ridge: f64,
        mode: PrimitiveMode,
    },
}

fn default_rbf() -> usize {
    20
}

fn default_ridge() -> f64 {
    1e-6
}

impl MotionConfig {
    pub fn build(&self) -> Result<ViaPointMp> {
        match self {
            MotionConfig::Stroke {
                direction,
                amplitude_m,
                period_s,
                n_rbf,
            } => wiping_stroke(*direction, *amplitude_m, *period_s, *n_rbf),
            MotionConfig::Demo { path, n_rbf, ridge, mode } => {
                Ok(learn_vmp(&load_demo_csv(path)?, *n_rbf, *ridge, *mode)?.primitive)
            }
        }
    }
}

/// Initial tool pose; joints are found by inverse kinematics from `seed_rad`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartConfig {
    pub position_m: [f64; 2],
    pub orientation_rad: f64,
    pub seed_rad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    /// Standard deviation of the force reading per axis.
    pub force_noise_n: f64,
    pub torque_noise_nm: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            force_noise_n: 0.0,
            torque_noise_nm: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Ticks before this time are left out of the force RMSE.
    pub settle_s: f64,
    /// Mode switches up to this long after an event still belong to it.
    pub event_grace_s: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            settle_s: 2.0,
            event_grace_s: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration_s: f64,
    pub dt_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// When false the controller stays in normal mode whatever the detector says.
    #[serde(default = "default_true")]
    pub adaptation: bool,
    #[serde(default)]
    pub arm: ArmParams,
    pub start: StartConfig,
    pub surface: SurfaceModel,
    #[serde(default)]
    pub contact: ContactParams,
    pub motion: MotionConfig,
    #[serde(default)]
    pub targets: TaskTargets,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub models: Vec<PathBuf>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub perturbations: Vec<PerturbationEvent>,
}

fn default_true() -> bool {
    true
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn preset(name: &str) -> Option<Result<Self>> {
        PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| Self::from_toml(text))
    }

    /// Load a config file, falling back to a preset of that name.
    pub fn load(path_or_preset: &str) -> Result<Self> {
        let path = Path::new(path_or_preset);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return Self::from_toml(&text).map_err(|e| match e {
                Error::Config(m) => Error::format(path, m),
                e => e,
            });
        }
        Self::preset(path_or_preset).unwrap_or_else(|| {
            Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such config file or preset"),
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_s > 0.0) || !(self.duration_s >= self.dt_s) {
            return Err(Error::Config(format!(
                "need dt_s > 0 and duration_s >= dt_s (got {} and {})",
                self.dt_s, self.duration_s
            )));
        }
        self.arm.validate()?;
        self.surface.validate()?;
        self.contact.validate()?;
        self.targets.validate()?;
        self.controller.validate()?;
        self.detector.validate()?;
        self.training.validate()?;
        PerturbationEvent::validate_schedule(&self.perturbations)?;
        if self.start.seed_rad.len() != self.arm.dof() {
            return Err(Error::Config(format!(
                "start.seed_rad has {} entries for a {}-joint arm",
                self.start.seed_rad.len(),
                self.arm.dof()
            )));
        }
        if !(self.sensor.force_noise_n >= 0.0 && self.sensor.torque_noise_nm >= 0.0) {
            return Err(Error::Config("sensor noise must be non-negative".into()));
        }
        let mut files: Vec<&Path> = self.models.iter().map(PathBuf::as_path).collect();
        if let Some(p) = &self.detector.threshold_file {
            files.push(p);
        }
        if let MotionConfig::Demo { path, .. } = &self.motion {
            files.push(path);
        }
        for f in files {
            if !f.is_file() {
                return Err(Error::io(f, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist")));
            }
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        (self.duration_s / self.dt_s).round() as usize
    }

    /// The controller's model of the arm: the plant without the payload.
    pub fn controller_arm(&self) -> ArmParams {
        ArmParams {
            tip_mass: 0.0,
            ..self.arm.clone()
        }
    }

    pub fn start_pose(&self) -> Vector3<f64> {
        Vector3::new(self.start.position_m[0], self.start.position_m[1], self.start.orientation_rad)
    }

    pub fn start_seed(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.start.seed_rad)
    }

    /// Fixed threshold, else the calibration file at this scenario's `k`,
    /// else none.
    pub fn resolve_threshold(&self) -> Result<Option<f64>> {
        if let Some(t) = self.detector.threshold {
            return Ok(Some(t));
        }
        match &self.detector.threshold_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let c: Calibration = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
                Ok(Some(c.threshold_at(self.detector.calibration_k)))
            }
            None => Ok(None),
        }
    }
}
