use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parametric rigid surfaces. Material lies on the side opposite the normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceModel {
    Flat {
        height_m: f64,
    },
    /// Line through `(0, offset_m)` rising at `angle_rad`.
    Slope {
        angle_rad: f64,
        offset_m: f64,
    },
    /// Height `low_m` left of `step_x_m`, `high_m` from there on.
    Step {
        low_m: f64,
        high_m: f64,
        step_x_m: f64,
    },
    /// Circular arc. With `concave` set the material fills the disc and the
    /// normal points away from the center; otherwise the material lies
    /// outside the circle (a bowl) and the normal points toward the center.
    Arc {
        center_m: [f64; 2],
        radius_m: f64,
        concave: bool,
    },
}

impl SurfaceModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SurfaceModel::Flat { height_m } => height_m.is_finite(),
            SurfaceModel::Slope { angle_rad, offset_m } => angle_rad.is_finite() && offset_m.is_finite(),
            SurfaceModel::Step { low_m, high_m, step_x_m } => {
                low_m.is_finite() && high_m.is_finite() && step_x_m.is_finite() && high_m >= low_m
            }
            SurfaceModel::Arc { center_m, radius_m, .. } => {
                center_m.iter().all(|c| c.is_finite()) && radius_m > 0.0 && radius_m.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid surface {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceQuery {
    /// Signed distance; negative inside the material.
    pub distance: f64,
    pub normal: Vector2<f64>,
    /// Normal rotated by -90 degrees.
    pub tangent: Vector2<f64>,
}

impl SurfaceQuery {
    fn new(distance: f64, normal: Vector2<f64>) -> Self {
        Self {
            distance,
            normal,
            tangent: Vector2::new(normal.y, -normal.x),
        }
    }
}

pub fn surface_query(surface: &SurfaceModel, point: &Vector2<f64>) -> Result<SurfaceQuery> {
    if !(point.x.is_finite() && point.y.is_finite()) {
        return Err(Error::NonFinite("surface query point".into()));
    }
    match *surface {
        SurfaceModel::Flat { height_m } => Ok(SurfaceQuery::new(point.y - height_m, Vector2::new(0.0, 1.0))),
        SurfaceModel::Slope { angle_rad, offset_m } => {
            let normal = Vector2::new(-angle_rad.sin(), angle_rad.cos());
            let rel = point - Vector2::new(0.0, offset_m);
            Ok(SurfaceQuery::new(rel.dot(&normal), normal))
        }
        SurfaceModel::Step { low_m, high_m, step_x_m } => Ok(step_query(low_m, high_m, step_x_m, point)),
        SurfaceModel::Arc { center_m, radius_m, concave } => {
            let center = Vector2::new(center_m[0], center_m[1]);
            let rel = point - center;
            let r = rel.norm();
            if r == 0.0 {
                return Err(Error::DegenerateNormal);
            }
            let radial = rel / r;
            if concave {
                Ok(SurfaceQuery::new(r - radius_m, radial))
            } else {
                Ok(SurfaceQuery::new(radius_m - r, -radial))
            }
        }
    }
}

/// Signed distance to the region `{y < low for x < x_s} ∪ {y < high for x >= x_s}`.
fn step_query(low: f64, high: f64, x_s: f64, p: &Vector2<f64>) -> SurfaceQuery {
    let inside = if p.x < x_s { p.y < low } else { p.y < high };
    // boundary pieces: left tread, riser, right tread
    let candidates = [
        Vector2::new(p.x.min(x_s), low),
        Vector2::new(x_s, p.y.clamp(low, high)),
        Vector2::new(p.x.max(x_s), high),
    ];
    let mut best = candidates[0];
    let mut best_d = (p - best).norm();
    for c in &candidates[1..] {
        let d = (p - c).norm();
        if d < best_d {
            best = *c;
            best_d = d;
        }
    }
    if best_d == 0.0 {
        // on the boundary: use the piece's own outward normal
        let normal = if p.x == x_s && p.y > low && p.y < high {
            Vector2::new(-1.0, 0.0)
        } else {
            Vector2::new(0.0, 1.0)
        };
        return SurfaceQuery::new(0.0, normal);
    }
    let dir = (p - best) / best_d;
    if inside {
        SurfaceQuery::new(-best_d, -dir)
    } else {
        SurfaceQuery::new(best_d, dir)
    }
}
