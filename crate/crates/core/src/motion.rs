//! Via-point movement primitive: `y(x) = h(x) + f(x) + anchor` over a canonical
//! phase `x ∈ [0, 1]`.
//!
//! The elementary trajectory `h` is a quintic with zero boundary velocity and
//! acceleration (constant in periodic mode). The shape term `f` is a plain
//! weighted sum of radial basis functions; in discrete mode it is multiplied
//! by `x (1 − x)` so the endpoints stay exact for any weights, in periodic
//! mode it uses wrapped (von Mises) bases so it repeats seamlessly.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveMode {
    Discrete,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalPhase {
    pub x: f64,
    pub duration: f64,
}

impl CanonicalPhase {
    pub fn new(duration: f64) -> Self {
        Self { x: 0.0, duration }
    }
}

pub fn canonical_advance(phase: CanonicalPhase, dt: f64, mode: PrimitiveMode) -> CanonicalPhase {
    let x = phase.x + dt / phase.duration;
    let x = match mode {
        PrimitiveMode::Discrete => x.min(1.0),
        PrimitiveMode::Periodic => x.rem_euclid(1.0),
    };
    CanonicalPhase { x, ..phase }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViaPointMp {
    pub start: DVector<f64>,
    pub goal: DVector<f64>,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    /// `n_rbf x d`
    pub weights: DMatrix<f64>,
    pub duration: f64,
    pub mode: PrimitiveMode,
    pub anchor: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpSample {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
}

/// Uniformly sampled demonstration: one row per sample.
#[derive(Debug, Clone)]
pub struct Demo {
    pub times: Vec<f64>,
    pub values: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct LearnedMp {
    pub primitive: ViaPointMp,
    pub rmse: f64,
}

fn min_jerk(x: f64) -> (f64, f64) {
    let (x2, x3) = (x * x, x * x * x);
    (x3 * (10.0 - 15.0 * x + 6.0 * x2), 30.0 * x2 * (1.0 - 2.0 * x + x2))
}

impl ViaPointMp {
    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn n_rbf(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let ok = self.n_rbf() >= 2
            && self.widths.len() == self.n_rbf()
            && self.widths.iter().all(|w| *w > 0.0)
            && self.duration > 0.0
            && self.goal.len() == d
            && self.anchor.len() == d
            && self.weights.shape() == (self.n_rbf(), d);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("inconsistent movement primitive".into()))
        }
    }

    /// Basis values and their phase derivatives at `x`.
    fn basis(&self, x: f64) -> (DVector<f64>, DVector<f64>) {
        let n = self.n_rbf();
        let mut phi = DVector::zeros(n);
        let mut dphi = DVector::zeros(n);
        match self.mode {
            PrimitiveMode::Discrete => {
                let (b, db) = (x * (1.0 - x), 1.0 - 2.0 * x);
                for i in 0..n {
                    let w2 = self.widths[i] * self.widths[i];
                    let dx = x - self.centers[i];
                    let psi = (-dx * dx / (2.0 * w2)).exp();
                    phi[i] = b * psi;
                    dphi[i] = db * psi - b * dx / w2 * psi;
                }
            }
            PrimitiveMode::Periodic => {
                for i in 0..n {
                    let kappa = 1.0 / (TAU * self.widths[i]).powi(2);
                    let arg = TAU * (x - self.centers[i]);
                    let psi = (kappa * (arg.cos() - 1.0)).exp();
                    phi[i] = psi;
                    dphi[i] = -kappa * TAU * arg.sin() * psi;
                }
            }
        }
        (phi, dphi)
    }

    fn elementary(&self, x: f64) -> (DVector<f64>, DVector<f64>) {
        match self.mode {
            PrimitiveMode::Discrete => {
                let (s, ds) = min_jerk(x);
                let delta = &self.goal - &self.start;
                (&self.start + &delta * s, delta * ds)
            }
            PrimitiveMode::Periodic => (self.start.clone(), DVector::zeros(self.dim())),
        }
    }

    /// Position `h + f + anchor` and time derivative `(h' + f') / T`.
    pub fn evaluate(&self, x: f64) -> MpSample {
        let (h, dh) = self.elementary(x);
        let (phi, dphi) = self.basis(x);
        let f = self.weights.tr_mul(&phi);
        let df = self.weights.tr_mul(&dphi);
        MpSample {
            position: h + f + &self.anchor,
            velocity: (dh + df) / self.duration,
        }
    }

    pub fn set_anchor(&self, anchor: DVector<f64>) -> Result<Self> {
        if anchor.len() != self.dim() || !anchor.iter().all(|a| a.is_finite()) {
            return Err(Error::InvalidParameter("anchor must be finite with the primitive's dimension".into()));
        }
        Ok(Self { anchor, ..self.clone() })
    }
}

/// Fit a primitive to a demonstration by ridge regression on the shape bases.
pub fn learn_vmp(demo: &Demo, n_rbf: usize, lambda: f64, mode: PrimitiveMode) -> Result<LearnedMp> {
    let samples = demo.values.nrows();
    let d = demo.values.ncols();
    if n_rbf < 2 || samples < n_rbf || demo.times.len() != samples {
        return Err(Error::InvalidParameter(format!(
            "demo with {samples} samples cannot support {n_rbf} basis functions"
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter("regularization must be non-negative".into()));
    }
    let t0 = demo.times[0];
    let duration = demo.times[samples - 1] - t0;
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter("demo must span positive time".into()));
    }
    let (centers, widths): (Vec<f64>, Vec<f64>) = match mode {
        PrimitiveMode::Discrete => {
            let spacing = 1.0 / (n_rbf - 1) as f64;
            (0..n_rbf).map(|i| (i as f64 * spacing, spacing)).unzip()
        }
        PrimitiveMode::Periodic => {
            let spacing = 1.0 / n_rbf as f64;
            (0..n_rbf).map(|i| (i as f64 * spacing, spacing)).unzip()
        }
    };
    let start = demo.values.row(0).transpose();
    let goal = match mode {
        PrimitiveMode::Discrete => demo.values.row(samples - 1).transpose(),
        PrimitiveMode::Periodic => start.clone(),
    };
    let mut mp = ViaPointMp {
        start,
        goal,
        centers,
        widths,
        weights: DMatrix::zeros(n_rbf, d),
        duration,
        mode,
        anchor: DVector::zeros(d),
    };

    let phases: Vec<f64> = demo.times.iter().map(|t| (t - t0) / duration).collect();
    let mut design = DMatrix::zeros(samples, n_rbf);
    let mut residual = DMatrix::zeros(samples, d);
    for (i, &x) in phases.iter().enumerate() {
        design.set_row(i, &mp.basis(x).0.transpose());
        let (h, _) = mp.elementary(x);
        residual.set_row(i, &(demo.values.row(i) - h.transpose()));
    }
    let normal = design.tr_mul(&design) + DMatrix::identity(n_rbf, n_rbf) * lambda;
    let chol = normal.cholesky().ok_or(Error::RankDeficient)?;
    let diag = chol.l_dirty().diagonal();
    if (diag.min() / diag.max()).powi(2) < 1e-15 {
        return Err(Error::RankDeficient);
    }
    mp.weights = chol.solve(&design.tr_mul(&residual));

    let mut sq = 0.0;
    for (i, &x) in phases.iter().enumerate() {
        let err = mp.evaluate(x).position - demo.values.row(i).transpose();
        sq += err.norm_squared();
    }
    let rmse = (sq / (samples * d) as f64).sqrt();
    Ok(LearnedMp { primitive: mp, rmse })
}

/// Built-in periodic wiping stroke: `amplitude · sin(2π t / period)` along
/// `direction` in the plane, fitted as a periodic primitive.
pub fn wiping_stroke(direction: [f64; 2], amplitude: f64, period: f64, n_rbf: usize) -> Result<ViaPointMp> {
    let norm = direction[0].hypot(direction[1]);
    if !(norm > 0.0 && amplitude.is_finite() && period > 0.0) {
        return Err(Error::InvalidParameter("wiping stroke needs a direction, finite amplitude and positive period".into()));
    }
    let samples = 20 * n_rbf.max(2) + 1;
    let times: Vec<f64> = (0..samples).map(|i| period * i as f64 / (samples - 1) as f64).collect();
    let values = DMatrix::from_fn(samples, 2, |i, j| {
        amplitude * (TAU * times[i] / period).sin() * direction[j] / norm
    });
    Ok(learn_vmp(&Demo { times, values }, n_rbf, 1e-9, PrimitiveMode::Periodic)?.primitive)
}

/// Read a demonstration CSV with columns `t, dim_1, ..., dim_d` and a header row.
pub fn load_demo_csv(path: &Path) -> Result<Demo> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e))?;
        let vals: Vec<f64> = record
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, e))?;
        if vals.len() < 2 {
            return Err(Error::format(path, "demo rows need a time and at least one dimension"));
        }
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    if rows.len() < 2 {
        return Err(Error::format(path, "demo needs at least two samples"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::format(path, "ragged demo rows"));
    }
    let step = times[1] - times[0];
    if !(step > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step) {
        return Err(Error::format(path, "demo must be uniformly sampled in time"));
    }
    let values = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    Ok(Demo { times, values })
}
