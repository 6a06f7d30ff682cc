use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{ContactParams, SurfaceQuery};
use crate::error::{Error, Result};

/// Capsule obstacle: a segment thickened by `radius_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub from_m: [f64; 2],
    pub to_m: [f64; 2],
    #[serde(default)]
    pub radius_m: f64,
}

impl Obstacle {
    pub fn query(&self, p: &Vector2<f64>) -> Result<SurfaceQuery> {
        let a = Vector2::new(self.from_m[0], self.from_m[1]);
        let b = Vector2::new(self.to_m[0], self.to_m[1]);
        let ab = b - a;
        let len2 = ab.norm_squared();
        let s = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let rel = p - (a + s * ab);
        let r = rel.norm();
        if r == 0.0 {
            return Err(Error::DegenerateNormal);
        }
        let normal = rel / r;
        Ok(SurfaceQuery {
            distance: r - self.radius_m,
            normal,
            tangent: Vector2::new(normal.y, -normal.x),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationKind {
    Collision { obstacle: Obstacle, contact: ContactParams },
    /// Blocking wrench `(fx N, fy N, tau N·m)` at the end-effector.
    Interruption { wrench: [f64; 3] },
    /// Pulling wrench at the end-effector.
    Drag { wrench: [f64; 3] },
}

/// Unknown keys are rejected by the flattened kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEvent {
    pub start_s: f64,
    pub duration_s: f64,
    #[serde(flatten)]
    pub kind: PerturbationKind,
}

impl PerturbationEvent {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s()
    }

    pub fn validate_schedule(schedule: &[PerturbationEvent]) -> Result<()> {
        for (i, e) in schedule.iter().enumerate() {
            if !(e.duration_s > 0.0) || !e.start_s.is_finite() {
                return Err(Error::InvalidParameter(format!("event {i}: duration must be positive")));
            }
            if let PerturbationKind::Collision { contact, .. } = &e.kind {
                contact.validate()?;
            }
        }
        if schedule.windows(2).any(|w| w[1].start_s < w[0].start_s) {
            return Err(Error::InvalidParameter("perturbation events must be sorted by start time".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ActiveDisturbance<'a> {
    pub wrench: Vector3<f64>,
    pub obstacles: Vec<(&'a Obstacle, &'a ContactParams)>,
}

pub fn active_disturbance(schedule: &[PerturbationEvent], t: f64) -> ActiveDisturbance<'_> {
    let mut out = ActiveDisturbance::default();
    for event in schedule {
        // sorted by start: nothing later can be active
        if event.start_s > t {
            break;
        }
        if !event.is_active(t) {
            continue;
        }
        match &event.kind {
            PerturbationKind::Collision { obstacle, contact } => out.obstacles.push((obstacle, contact)),
            PerturbationKind::Interruption { wrench } | PerturbationKind::Drag { wrench } => {
                out.wrench += Vector3::from(*wrench);
            }
        }
    }
    out
}
