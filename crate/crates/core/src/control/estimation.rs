use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::Vector2;

use crate::error::{Error, Result};

/// Least-squares friction coefficient through the origin over samples whose
/// normal force exceeds `threshold`: `μ̂ = Σ F_t F_n / Σ F_n²`.
pub fn estimate_friction(history: &[(f64, f64)], threshold: f64) -> Result<f64> {
    let (mut tn, mut nn) = (0.0, 0.0);
    for &(f_n, f_t) in history {
        if f_n > threshold {
            tn += f_t * f_n;
            nn += f_n * f_n;
        }
    }
    if nn == 0.0 {
        return Err(Error::InsufficientContact(format!(
            "no samples with normal force above {threshold} N"
        )));
    }
    Ok(tn / nn)
}

/// Sliding history of `(F_n, |F_t|)` pairs feeding [`estimate_friction`].
#[derive(Debug, Clone)]
pub struct FrictionHistory {
    capacity: usize,
    samples: VecDeque<(f64, f64)>,
}

impl FrictionHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            samples: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn push(&mut self, f_n: f64, f_t: f64) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((f_n, f_t));
    }

    pub fn estimate(&self, threshold: f64) -> Result<f64> {
        let (a, b) = self.samples.as_slices();
        if b.is_empty() {
            estimate_friction(a, threshold)
        } else {
            let joined: Vec<_> = self.samples.iter().copied().collect();
            estimate_friction(&joined, threshold)
        }
    }
}

pub fn wrap_to_pi(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped == -PI {
        PI
    } else {
        wrapped
    }
}

/// World-frame angle of the surface normal that explains the measured force
/// `F_e = F_n (n̂ − s μ̂ t̂)`, where `t̂` is `n̂` rotated by −90° and `s` the
/// sign of the sliding velocity along `t̂`.
pub fn estimate_force_direction(force: &Vector2<f64>, mu: f64, sliding_sign: f64, threshold: f64) -> Result<f64> {
    let magnitude = force.norm();
    if !(magnitude > threshold) {
        return Err(Error::InsufficientContact(format!(
            "force magnitude {magnitude} N is below {threshold} N"
        )));
    }
    Ok(wrap_to_pi(force.y.atan2(force.x) - (sliding_sign * mu).atan()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_friction_fit() {
        let h: Vec<_> = (1..20).map(|i| (i as f64, 0.3 * i as f64)).collect();
        assert_relative_eq!(estimate_friction(&h, 0.5).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn sliding_history_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hist = FrictionHistory::new(50);
        let mut all = Vec::new();
        for _ in 0..137 {
            let f_n = rng.random_range(0.0..20.0);
            let f_t = 0.25 * f_n + rng.random_range(-0.5..0.5);
            hist.push(f_n, f_t);
            all.push((f_n, f_t));
        }
        let tail = &all[all.len() - 50..];
        let (tn, nn) = tail
            .iter()
            .filter(|(n, _)| *n > 1.0)
            .fold((0.0, 0.0), |(a, b), (n, t)| (a + n * t, b + n * n));
        assert!((hist.estimate(1.0).unwrap() - tn / nn).abs() < 1e-12);
    }

    #[test]
    fn no_contact_is_an_error() {
        let h = vec![(0.01, 0.0), (0.05, 0.01)];
        assert!(matches!(estimate_friction(&h, 0.1), Err(Error::InsufficientContact(_))));
    }

    #[test]
    fn frictionless_direction() {
        let f = Vector2::new(1.0, 2.0);
        assert_relative_eq!(estimate_force_direction(&f, 0.0, 1.0, 0.1).unwrap(), 2.0f64.atan2(1.0));
    }

    #[test]
    fn recovers_normal_under_sliding() {
        let (n, mu, f_n) = (Vector2::new(0.0, 1.0), 0.3, 10.0);
        let t = Vector2::new(n.y, -n.x);
        // rightward sliding: friction points left
        let force = f_n * n - mu * f_n * t;
        let alpha = estimate_force_direction(&force, mu, 1.0, 0.1).unwrap();
        assert!((alpha - PI / 2.0).abs() < 1e-9);
        for angle in [-2.5, -0.3, 0.7, 2.9] {
            let n = Vector2::new(f64::cos(angle), f64::sin(angle));
            let t = Vector2::new(n.y, -n.x);
            let force = 4.0 * (n + 0.2 * t);
            assert!((estimate_force_direction(&force, 0.2, -1.0, 0.1).unwrap() - angle).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_force_is_an_error() {
        assert!(estimate_force_direction(&Vector2::zeros(), 0.3, 1.0, 0.1).is_err());
    }

    #[test]
    fn wrap() {
        assert_relative_eq!(wrap_to_pi(3.0 * PI / 2.0), -PI / 2.0);
        assert_relative_eq!(wrap_to_pi(-PI), PI);
        assert_relative_eq!(wrap_to_pi(0.25), 0.25);
    }
}
