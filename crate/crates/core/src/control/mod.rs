//! Adaptive force-impedance controller.
//!
//! Velocity sources (movement primitive, force, direction and torque PIDs) sum
//! into a desired task velocity; an impedance law turns the velocity error
//! into a task force, which is mapped to joint torques with model
//! compensation and a null-space posture term. Every gain follows a
//! decay/recovery schedule driven by the control mode.

mod estimation;
mod impedance;
mod pid;
mod schedule;

pub use estimation::{estimate_force_direction, estimate_friction, wrap_to_pi, FrictionHistory};
pub use impedance::{impedance_force, ImpedanceGains, ImpedanceState};
pub use pid::{pid_velocity, PidGains, PidState};
pub use schedule::{schedule_gains, ControlMode, GainSchedule, ScheduledParam};

use std::f64::consts::{PI, TAU};

use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ee_pose, task_space_matrices, ArmParams, RobotState, SingularityPolicy, TaskSpaceModel};
use crate::error::{Error, Result};
use crate::motion::{canonical_advance, CanonicalPhase, PrimitiveMode, ViaPointMp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpedanceConfig {
    pub translational_stiffness_n_per_m: f64,
    pub rotational_stiffness_nm_per_rad: f64,
    pub translational_damping_ns_per_m: f64,
    pub rotational_damping_nms_per_rad: f64,
    pub translational_mass_kg: f64,
    pub rotational_inertia_kgm2: f64,
    pub integral_leak_per_s: f64,
}

impl Default for ImpedanceConfig {
    fn default() -> Self {
        Self {
            translational_stiffness_n_per_m: 2000.0,
            rotational_stiffness_nm_per_rad: 200.0,
            // critically damped against 5 kg
            translational_damping_ns_per_m: 200.0,
            rotational_damping_nms_per_rad: 1.0,
            translational_mass_kg: 0.0,
            rotational_inertia_kgm2: 0.0,
            integral_leak_per_s: 0.2,
        }
    }
}

impl ImpedanceConfig {
    pub fn gains(&self) -> ImpedanceGains {
        ImpedanceGains {
            mass: Vector3::new(self.translational_mass_kg, self.translational_mass_kg, self.rotational_inertia_kgm2),
            damping: Vector3::new(
                self.translational_damping_ns_per_m,
                self.translational_damping_ns_per_m,
                self.rotational_damping_nms_per_rad,
            ),
            stiffness: Vector3::new(
                self.translational_stiffness_n_per_m,
                self.translational_stiffness_n_per_m,
                self.rotational_stiffness_nm_per_rad,
            ),
            leak_rate: self.integral_leak_per_s,
        }
    }
}

/// Every scheduled parameter decays from its maximum to zero in `decay_time_s`
/// and recovers from zero in `recovery_time_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub decay_time_s: f64,
    pub recovery_time_s: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            decay_time_s: 0.3,
            recovery_time_s: 6.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.decay_time_s > 0.0 && self.recovery_time_s > self.decay_time_s {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "recovery must be strictly slower than decay: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostureConfig {
    pub stiffness_nm_per_rad: f64,
    pub damping_nms_per_rad: f64,
    /// Defaults to the initial joint configuration.
    pub rest_rad: Option<Vec<f64>>,
}

impl Default for PostureConfig {
    fn default() -> Self {
        Self {
            stiffness_nm_per_rad: 5.0,
            damping_nms_per_rad: 0.5,
            rest_rad: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posture {
    pub rest: DVector<f64>,
    pub stiffness: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    /// Forces below this are treated as no contact. Keep it well above the
    /// sensor noise, or the normal estimate wanders while the tool is free.
    pub contact_threshold_n: f64,
    pub friction_history: usize,
    /// Low-pass coefficient on the normal-direction estimate per tick.
    pub direction_filter: f64,
    pub sliding_regularization_mps: f64,
    /// Friction samples are taken only above this sliding speed.
    pub friction_min_speed_mps: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            contact_threshold_n: 3.0,
            friction_history: 500,
            direction_filter: 0.05,
            sliding_regularization_mps: 1e-3,
            friction_min_speed_mps: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceMask {
    pub vmp: bool,
    pub force: bool,
    pub direction: bool,
    pub torque: bool,
}

impl Default for SourceMask {
    fn default() -> Self {
        Self {
            vmp: true,
            force: true,
            direction: true,
            torque: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub impedance: ImpedanceConfig,
    pub force_pid: PidGains,
    pub direction_pid: PidGains,
    pub torque_pid: PidGains,
    pub schedule: ScheduleConfig,
    pub posture: PostureConfig,
    pub estimation: EstimationConfig,
    pub sources: SourceMask,
    pub singularity: SingularityPolicy,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            impedance: ImpedanceConfig::default(),
            force_pid: PidGains {
                kp: 0.005,
                ki: 0.02,
                kd: 0.0,
                derivative_filter: 0.1,
                output_clamp: 0.2,
            },
            direction_pid: PidGains {
                kp: 2.0,
                ki: 0.0,
                kd: 0.0,
                derivative_filter: 0.1,
                output_clamp: 1.0,
            },
            torque_pid: PidGains {
                kp: 0.05,
                ki: 0.0,
                kd: 0.0,
                derivative_filter: 0.1,
                output_clamp: 1.0,
            },
            schedule: ScheduleConfig::default(),
            posture: PostureConfig::default(),
            estimation: EstimationConfig::default(),
            sources: SourceMask::default(),
            singularity: SingularityPolicy::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.impedance.gains().validate()?;
        self.force_pid.validate()?;
        self.direction_pid.validate()?;
        self.torque_pid.validate()?;
        self.schedule.validate()?;
        let e = &self.estimation;
        if !(e.contact_threshold_n > 0.0
            && e.friction_history > 0
            && e.direction_filter > 0.0
            && e.direction_filter <= 1.0
            && e.sliding_regularization_mps > 0.0
            && e.friction_min_speed_mps >= 0.0)
        {
            return Err(Error::InvalidParameter(format!("invalid estimation settings {e:?}")));
        }
        if !(self.impedance.translational_stiffness_n_per_m > 0.0) {
            return Err(Error::InvalidParameter("translational stiffness must be positive".into()));
        }
        Ok(())
    }
}

/// Desired force `F_d(τ) = base − amplitude · sin(2π τ / period)`, with τ the
/// wiping-motion time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskTargets {
    pub force_base_n: f64,
    pub force_amplitude_n: f64,
    pub force_period_s: f64,
    /// Desired angle of the surface normal relative to the reversed tool axis.
    pub direction_rad: f64,
    pub torque_nm: f64,
}

impl Default for TaskTargets {
    fn default() -> Self {
        Self {
            force_base_n: 10.0,
            force_amplitude_n: 5.0,
            force_period_s: 2.0,
            direction_rad: 0.0,
            torque_nm: 0.0,
        }
    }
}

impl TaskTargets {
    pub fn validate(&self) -> Result<()> {
        if self.force_period_s > 0.0 && [self.force_base_n, self.force_amplitude_n, self.direction_rad, self.torque_nm].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid task targets {self:?}")))
        }
    }

    pub fn force_at(&self, motion_time: f64) -> f64 {
        self.force_base_n - self.force_amplitude_n * (TAU * motion_time / self.force_period_s).sin()
    }
}

/// `V_d` as the sum of the enabled sources.
pub fn compose_velocity(
    v_vmp: &Vector3<f64>,
    v_f: &Vector3<f64>,
    v_r: &Vector3<f64>,
    v_t: &Vector3<f64>,
    mask: &SourceMask,
) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    for (on, src) in [(mask.vmp, v_vmp), (mask.force, v_f), (mask.direction, v_r), (mask.torque, v_t)] {
        if on {
            v += src;
        }
    }
    v
}

/// `τ = Jᵀ (F_m + μ + p) + (I − Jᵀ J̄ᵀ)(−K_n (q − q_rest) − D_n q̇)`.
pub fn torque_command(
    f_m: &Vector3<f64>,
    model: &TaskSpaceModel,
    state: &RobotState,
    posture: &Posture,
) -> DVector<f64> {
    let task = f_m + model.bias + model.gravity;
    let task = DVector::from_column_slice(task.as_slice());
    let posture_torque = -(&state.q - &posture.rest) * posture.stiffness - &state.qdot * posture.damping;
    model.jacobian.transpose() * task + model.null_space_projector() * posture_torque
}

/// Every intermediate signal of one control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub force_desired: f64,
    /// Measured force along the estimated normal.
    pub normal_force: f64,
    pub alpha_hat: f64,
    pub mu_hat: f64,
    pub v_vmp: Vector3<f64>,
    pub v_f: Vector3<f64>,
    pub v_r: Vector3<f64>,
    pub v_t: Vector3<f64>,
    pub v_d: Vector3<f64>,
    pub f_m: Vector3<f64>,
    pub tau: DVector<f64>,
    pub gain_scale: f64,
    pub mode: ControlMode,
    pub phase: f64,
    /// End-effector twist from the controller's kinematics.
    pub twist: Vector3<f64>,
    /// `(v_t, v_n, ω)` in the estimated surface frame.
    pub local_velocity: Vector3<f64>,
    /// `(F_t, F_n)` in the estimated surface frame.
    pub local_force: Vector2<f64>,
}

/// Project a twist and a measured wrench onto the surface frame given by the
/// normal angle `alpha_hat`: returns `(v_t, v_n, ω)` and `(F_t, F_n)`.
pub fn local_frame(alpha_hat: f64, twist: &Vector3<f64>, wrench: &Vector3<f64>) -> (Vector3<f64>, Vector2<f64>) {
    let n = Vector2::new(alpha_hat.cos(), alpha_hat.sin());
    let t = Vector2::new(n.y, -n.x);
    (
        Vector3::new(twist.x * t.x + twist.y * t.y, twist.x * n.x + twist.y * n.y, twist.z),
        Vector2::new(wrench.x * t.x + wrench.y * t.y, wrench.x * n.x + wrench.y * n.y),
    )
}

/// Index layout of the scheduled parameters.
const N_SCHEDULED: usize = 18;
const IMP_K: usize = 0;
const IMP_D: usize = 3;
const IMP_M: usize = 6;
const PID_F: usize = 9;
const PID_R: usize = 12;
const PID_T: usize = 15;

#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    arm: ArmParams,
    vmp: ViaPointMp,
    posture: Posture,
    impedance_max: ImpedanceGains,
    schedule: GainSchedule,
    phase: CanonicalPhase,
    motion_time: f64,
    force_pid: PidState,
    direction_pid: PidState,
    torque_pid: PidState,
    impedance: ImpedanceState,
    friction: FrictionHistory,
    alpha_hat: f64,
    mu_hat: f64,
}

impl Controller {
    /// `arm` is the controller's model of the plant, which may differ from it.
    pub fn new(config: ControllerConfig, arm: ArmParams, vmp: ViaPointMp, initial: &RobotState) -> Result<Self> {
        config.validate()?;
        arm.validate()?;
        vmp.validate()?;
        if vmp.dim() < 2 {
            return Err(Error::InvalidParameter("movement primitive must have at least two dimensions".into()));
        }
        let rest = match &config.posture.rest_rad {
            Some(r) if r.len() == arm.dof() => DVector::from_column_slice(r),
            Some(r) => {
                return Err(Error::InvalidParameter(format!(
                    "posture rest has {} entries for a {}-joint arm",
                    r.len(),
                    arm.dof()
                )))
            }
            None => initial.q.clone(),
        };
        let posture = Posture {
            rest,
            stiffness: config.posture.stiffness_nm_per_rad,
            damping: config.posture.damping_nms_per_rad,
        };
        let impedance_max = config.impedance.gains();
        let mut maxima = Vec::with_capacity(N_SCHEDULED);
        maxima.extend(impedance_max.stiffness.iter());
        maxima.extend(impedance_max.damping.iter());
        maxima.extend(impedance_max.mass.iter());
        for g in [&config.force_pid, &config.direction_pid, &config.torque_pid] {
            maxima.extend([g.kp, g.ki, g.kd]);
        }
        let (decay, recovery) = (1.0 / config.schedule.decay_time_s, 1.0 / config.schedule.recovery_time_s);
        let schedule = GainSchedule::new(
            maxima.iter().map(|&k| ScheduledParam::with_fractional_rates(k, decay, recovery)).collect(),
        )?;
        let theta = ee_pose(&arm, &initial.q).z;
        let alpha_hat = wrap_to_pi(theta + PI);
        Ok(Self {
            friction: FrictionHistory::new(config.estimation.friction_history),
            phase: CanonicalPhase::new(vmp.duration),
            config,
            arm,
            vmp,
            posture,
            impedance_max,
            schedule,
            motion_time: 0.0,
            force_pid: PidState::default(),
            direction_pid: PidState::default(),
            torque_pid: PidState::default(),
            impedance: ImpedanceState::default(),
            alpha_hat,
            mu_hat: 0.0,
        })
    }

    pub fn mode(&self) -> ControlMode {
        self.schedule.mode
    }

    pub fn gains_recovered(&self) -> bool {
        self.schedule.fully_recovered()
    }

    pub fn schedule(&self) -> &GainSchedule {
        &self.schedule
    }

    /// Time the wiping motion has advanced, which stalls while gains are scaled down.
    pub fn motion_time(&self) -> f64 {
        self.motion_time
    }

    pub fn alpha_hat(&self) -> f64 {
        self.alpha_hat
    }

    /// Estimated surface normal and tangent.
    pub fn surface_frame(&self) -> (Vector2<f64>, Vector2<f64>) {
        let n = Vector2::new(self.alpha_hat.cos(), self.alpha_hat.sin());
        (n, Vector2::new(n.y, -n.x))
    }

    fn update_estimates(&mut self, force: &Vector2<f64>, velocity: &Vector2<f64>) {
        let est = self.config.estimation;
        let (n, t) = self.surface_frame();
        let speed = velocity.norm();
        if speed > est.friction_min_speed_mps {
            // The sliding direction is tangent to the surface and does not
            // depend on the normal estimate, so friction stays observable.
            let t_v = velocity / speed;
            let mut n_v = Vector2::new(-t_v.y, t_v.x);
            if n_v.dot(&n) < 0.0 {
                n_v = -n_v;
            }
            let f_n = force.dot(&n_v);
            if f_n > est.contact_threshold_n {
                self.friction.push(f_n, -force.dot(&t_v));
                if let Ok(mu) = self.friction.estimate(est.contact_threshold_n) {
                    self.mu_hat = mu.max(0.0);
                }
            }
        }
        let v_t = velocity.dot(&t);
        let sliding = v_t / (v_t * v_t + est.sliding_regularization_mps.powi(2)).sqrt();
        if let Ok(alpha) = estimate_force_direction(force, self.mu_hat, sliding, est.contact_threshold_n) {
            self.alpha_hat = wrap_to_pi(self.alpha_hat + est.direction_filter * wrap_to_pi(alpha - self.alpha_hat));
        }
    }

    /// One control period: returns joint torques and the tick's telemetry.
    ///
    /// `measured` is the sensed end-effector wrench `(fx, fy, τ)` and `mode`
    /// the latest detector decision.
    pub fn control_tick(
        &mut self,
        state: &RobotState,
        measured: &Vector3<f64>,
        targets: &TaskTargets,
        mode: ControlMode,
        t: f64,
        dt: f64,
    ) -> Result<(DVector<f64>, Telemetry)> {
        self.schedule.switch(mode, t);
        self.schedule.update(t);
        if self.schedule.current.iter().all(|v| *v == 0.0) {
            // fully compliant: drop stored errors so recovery starts from rest
            self.force_pid = PidState::default();
            self.direction_pid = PidState::default();
            self.torque_pid = PidState::default();
            self.impedance = ImpedanceState::default();
        }
        let k = &self.schedule.current;
        let scale = self.schedule.fraction(IMP_K);
        let impedance_gains = ImpedanceGains {
            stiffness: Vector3::new(k[IMP_K], k[IMP_K + 1], k[IMP_K + 2]),
            damping: Vector3::new(k[IMP_D], k[IMP_D + 1], k[IMP_D + 2]),
            mass: Vector3::new(k[IMP_M], k[IMP_M + 1], k[IMP_M + 2]),
            leak_rate: self.impedance_max.leak_rate,
        };
        let scaled_pid = |base: &PidGains, i: usize| PidGains { kp: k[i], ki: k[i + 1], kd: k[i + 2], ..*base };
        let force_gains = scaled_pid(&self.config.force_pid, PID_F);
        let direction_gains = scaled_pid(&self.config.direction_pid, PID_R);
        let torque_gains = scaled_pid(&self.config.torque_pid, PID_T);

        let model = task_space_matrices(state, &self.arm, &self.config.singularity)?;
        let twist_dyn = &model.jacobian * &state.qdot;
        let twist = Vector3::new(twist_dyn[0], twist_dyn[1], twist_dyn[2]);
        let theta = ee_pose(&self.arm, &state.q).z;
        let force_xy = Vector2::new(measured.x, measured.y);
        self.update_estimates(&force_xy, &Vector2::new(twist.x, twist.y));
        let (n, tangent) = self.surface_frame();
        let (local_velocity, local_force) = local_frame(self.alpha_hat, &twist, measured);
        let normal_force = local_force.y;
        let force_desired = targets.force_at(self.motion_time);
        let mask = self.config.sources;

        let sample = self.vmp.evaluate(self.phase.x);
        let path = Vector2::new(sample.velocity[0], sample.velocity[1]) * scale;
        let along = path.dot(&tangent);
        let spin = if self.vmp.dim() > 2 { sample.velocity[2] * scale } else { 0.0 };
        let v_vmp = Vector3::new(along * tangent.x, along * tangent.y, spin);

        let mut v_f = Vector3::zeros();
        if mask.force {
            let (u, next) = pid_velocity(&self.force_pid, &force_gains, force_desired - normal_force, dt);
            self.force_pid = next;
            v_f = Vector3::new(-u * n.x, -u * n.y, 0.0);
        }
        let mut v_r = Vector3::zeros();
        if mask.direction {
            let relative = wrap_to_pi(self.alpha_hat - theta - PI);
            let error = wrap_to_pi(targets.direction_rad - relative);
            let (u, next) = pid_velocity(&self.direction_pid, &direction_gains, error, dt);
            self.direction_pid = next;
            // turning the tool by +ω lowers the relative angle
            v_r.z = -u;
        }
        let mut v_t = Vector3::zeros();
        if mask.torque {
            let (u, next) = pid_velocity(&self.torque_pid, &torque_gains, targets.torque_nm - measured.z, dt);
            self.torque_pid = next;
            v_t.z = -u;
        }
        let v_d = compose_velocity(&v_vmp, &v_f, &v_r, &v_t, &mask);
        let (f_m, imp) = impedance_force(&v_d, &twist, &self.impedance, &impedance_gains, dt);
        self.impedance = imp;
        let tau = torque_command(&f_m, &model, state, &self.posture);
        if !tau.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("torque command at t = {t}")));
        }

        let telemetry = Telemetry {
            force_desired,
            normal_force,
            alpha_hat: self.alpha_hat,
            mu_hat: self.mu_hat,
            v_vmp,
            v_f,
            v_r,
            v_t,
            v_d,
            f_m,
            tau: tau.clone(),
            gain_scale: scale,
            mode: self.schedule.mode,
            phase: self.phase.x,
            twist,
            local_velocity,
            local_force,
        };
        self.phase = canonical_advance(self.phase, scale * dt, self.vmp.mode);
        self.motion_time += scale * dt;
        if self.vmp.mode == PrimitiveMode::Discrete && self.phase.x >= 1.0 {
            self.motion_time = self.motion_time.min(self.vmp.duration);
        }
        Ok((tau, telemetry))
    }
}

#[cfg(test)]
mod tests;
