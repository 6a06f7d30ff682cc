use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ModelHyper, ModelParams, Normalization, Weights};
use crate::error::{Error, Result};
use crate::motion::{PrimitiveMode, ViaPointMp};

pub const CONTAINER_VERSION: u32 = 1;
const MODEL_KIND: &str = "bigru-mdn";
const PRIMITIVE_KIND: &str = "via-point-primitive";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major.
    pub values: Vec<f64>,
}

/// Text weight container shared by predictive models and movement primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Container {
    pub version: u32,
    pub kind: String,
    pub hyperparameters: BTreeMap<String, Value>,
    #[serde(default)]
    pub normalization: BTreeMap<String, Vec<f64>>,
    pub arrays: Vec<NamedArray>,
}

pub fn save_container(container: &Container, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(container).map_err(|e| Error::format(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_container(path: &Path) -> Result<Container> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let c: Container = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    if c.version != CONTAINER_VERSION {
        return Err(Error::format(path, format!("unsupported container version {}", c.version)));
    }
    Ok(c)
}

impl Container {
    fn array(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let a = self
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::ShapeMismatch(format!("container lacks array {name}")))?;
        if a.shape != shape || a.values.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "array {name} has shape {:?}, expected {shape:?}",
                a.shape
            )));
        }
        Ok(a.values.clone())
    }

    fn hyper<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .hyperparameters
            .get(key)
            .ok_or_else(|| Error::ShapeMismatch(format!("container lacks hyperparameter {key}")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::ShapeMismatch(format!("hyperparameter {key}: {e}")))
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("container holds {}, expected {kind}", self.kind)))
        }
    }
}

impl ModelParams {
    pub fn to_container(&self) -> Container {
        let h = &self.hyper;
        let hyperparameters = BTreeMap::from([
            ("hidden".to_string(), Value::from(h.hidden)),
            ("components".to_string(), Value::from(h.components)),
            ("input_dim".to_string(), Value::from(h.input_dim)),
            ("output_dim".to_string(), Value::from(h.output_dim)),
            ("window".to_string(), Value::from(h.window)),
        ]);
        let normalization = BTreeMap::from([
            ("input_mean".to_string(), self.norm.input_mean.clone()),
            ("input_std".to_string(), self.norm.input_std.clone()),
            ("target_mean".to_string(), self.norm.target_mean.clone()),
            ("target_std".to_string(), self.norm.target_std.clone()),
        ]);
        let arrays = self
            .weights
            .named()
            .into_iter()
            .map(|(name, shape, values)| NamedArray {
                name,
                shape: shape.to_vec(),
                values: values.clone(),
            })
            .collect();
        Container {
            version: CONTAINER_VERSION,
            kind: MODEL_KIND.to_string(),
            hyperparameters,
            normalization,
            arrays,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(MODEL_KIND)?;
        let hyper = ModelHyper {
            hidden: c.hyper("hidden")?,
            components: c.hyper("components")?,
            input_dim: c.hyper("input_dim")?,
            output_dim: c.hyper("output_dim")?,
            window: c.hyper("window")?,
        };
        hyper.validate()?;
        let stat = |k: &str| {
            c.normalization
                .get(k)
                .cloned()
                .ok_or_else(|| Error::ShapeMismatch(format!("container lacks normalization {k}")))
        };
        let norm = Normalization {
            input_mean: stat("input_mean")?,
            input_std: stat("input_std")?,
            target_mean: stat("target_mean")?,
            target_std: stat("target_std")?,
        };
        let mut weights = Weights::zeros(&hyper);
        let layout: Vec<(String, [usize; 2])> = weights.named().into_iter().map(|(n, s, _)| (n, s)).collect();
        for ((name, shape), slot) in layout.iter().zip(weights.tensors_mut()) {
            *slot = c.array(name, shape)?;
        }
        let model = ModelParams { hyper, norm, weights };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_container(&self.to_container(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&load_container(path)?).map_err(|e| Error::format(path, e))
    }
}

impl ViaPointMp {
    pub fn to_container(&self) -> Container {
        let d = self.dim();
        let hyperparameters = BTreeMap::from([
            ("dim".to_string(), Value::from(d)),
            ("n_rbf".to_string(), Value::from(self.n_rbf())),
            ("duration_s".to_string(), Value::from(self.duration)),
            ("mode".to_string(), serde_json::to_value(self.mode).unwrap_or(Value::Null)),
        ]);
        let vector = |name: &str, v: &[f64]| NamedArray {
            name: name.to_string(),
            shape: vec![v.len(), 1],
            values: v.to_vec(),
        };
        let arrays = vec![
            vector("start", self.start.as_slice()),
            vector("goal", self.goal.as_slice()),
            vector("anchor", self.anchor.as_slice()),
            vector("centers", &self.centers),
            vector("widths", &self.widths),
            NamedArray {
                name: "weights".to_string(),
                shape: vec![self.n_rbf(), d],
                values: self.weights.transpose().as_slice().to_vec(),
            },
        ];
        Container {
            version: CONTAINER_VERSION,
            kind: PRIMITIVE_KIND.to_string(),
            hyperparameters,
            normalization: BTreeMap::new(),
            arrays,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(PRIMITIVE_KIND)?;
        let d: usize = c.hyper("dim")?;
        let n: usize = c.hyper("n_rbf")?;
        let mode: PrimitiveMode = c.hyper("mode")?;
        let weights = c.array("weights", &[n, d])?;
        let mp = ViaPointMp {
            start: DVector::from_vec(c.array("start", &[d, 1])?),
            goal: DVector::from_vec(c.array("goal", &[d, 1])?),
            anchor: DVector::from_vec(c.array("anchor", &[d, 1])?),
            centers: c.array("centers", &[n, 1])?,
            widths: c.array("widths", &[n, 1])?,
            weights: DMatrix::from_row_slice(n, d, &weights),
            duration: c.hyper("duration_s")?,
            mode,
        };
        mp.validate()?;
        Ok(mp)
    }
}
