use super::*;
use crate::dynamics::{inverse_kinematics, ContactParams, Environment, Plant, SurfaceModel};
use crate::motion::wiping_stroke;
use approx::assert_relative_eq;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arm_with_links(n: usize) -> ArmParams {
    let lengths = vec![0.8 / n as f64; n];
    let masses = vec![1.0; n];
    ArmParams {
        link_inertias: lengths.iter().zip(&masses).map(|(l, m)| m * l * l / 3.0).collect(),
        joint_damping: vec![0.0; n],
        link_lengths: lengths,
        link_masses: masses,
        ..ArmParams::default()
    }
}

fn tool_down_state(arm: &ArmParams) -> RobotState {
    let seed = DVector::from_vec(vec![0.3, 1.2, 1.6]);
    let q = inverse_kinematics(arm, &Vector3::new(0.45, 0.2, -PI / 2.0), &seed).unwrap();
    RobotState::at_rest(q)
}

fn controller(config: ControllerConfig, state: &RobotState) -> Controller {
    let vmp = wiping_stroke([1.0, 0.0], 0.1, 2.0, 20).unwrap();
    Controller::new(config, ArmParams::default(), vmp, state).unwrap()
}

#[test]
fn compose_sums_enabled_sources() {
    let a = Vector3::new(1.0, 2.0, 3.0);
    let b = Vector3::new(-0.5, 0.25, 0.0);
    let c = Vector3::new(0.0, 0.0, 0.75);
    let d = Vector3::new(0.125, 0.0, -1.0);
    let z = Vector3::zeros();
    let all = SourceMask { vmp: true, force: true, direction: true, torque: true };
    assert_eq!(compose_velocity(&z, &z, &z, &z, &all), z);
    let only_vmp = SourceMask { vmp: true, force: false, direction: false, torque: false };
    assert_eq!(compose_velocity(&a, &b, &c, &d, &only_vmp), a);
    assert_eq!(compose_velocity(&a, &b, &c, &d, &all), Vector3::new(0.625, 2.25, 2.75));
}

#[test]
fn gravity_compensation_at_rest() {
    let arm = ArmParams::default();
    let state = tool_down_state(&arm);
    let model = task_space_matrices(&state, &arm, &SingularityPolicy::default()).unwrap();
    let posture = Posture { rest: state.q.clone(), stiffness: 5.0, damping: 0.5 };
    let tau = torque_command(&Vector3::zeros(), &model, &state, &posture);
    let expected = model.jacobian.transpose() * DVector::from_column_slice(model.gravity.as_slice());
    assert_eq!(tau, expected);
    assert_relative_eq!(tau, model.joint_gravity, epsilon = 1e-9);
}

#[test]
fn gravity_compensation_holds_position() {
    let arm = ArmParams::default();
    let plant = Plant::new(arm.clone()).unwrap();
    let mut state = tool_down_state(&arm);
    let start = state.pose(&arm);
    let surface = SurfaceModel::Flat { height_m: -5.0 };
    let contact = ContactParams::default();
    let posture = Posture { rest: state.q.clone(), stiffness: 0.0, damping: 0.0 };
    let dt = 1e-3;
    for k in 0..1000 {
        let model = task_space_matrices(&state, &arm, &SingularityPolicy::default()).unwrap();
        let tau = torque_command(&Vector3::zeros(), &model, &state, &posture);
        let env = Environment { surface: &surface, contact: &contact, schedule: &[], t: k as f64 * dt };
        state = plant.step(&state, &tau, &env, dt).unwrap().state;
    }
    let drift = (state.pose(&arm) - start).fixed_rows::<2>(0).norm();
    assert!(drift < 1e-3, "drift {drift}");
}

#[test]
fn null_space_torque_exerts_no_task_force() {
    let arm = arm_with_links(5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let q = DVector::from_fn(5, |_, _| rng.random_range(-1.5..1.5));
        let qdot = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let state = RobotState::new(q, qdot);
        let model = task_space_matrices(&state, &arm, &SingularityPolicy::default()).unwrap();
        if model.singular {
            continue;
        }
        let posture = Posture { rest: DVector::zeros(5), stiffness: 7.0, damping: 2.0 };
        let tau_n = torque_command(&Vector3::zeros(), &model, &state, &posture)
            - model.jacobian.transpose() * DVector::from_column_slice((model.bias + model.gravity).as_slice());
        let lambda = DMatrix::from_column_slice(3, 3, model.inertia.as_slice());
        let force = lambda * &model.jacobian * &model.mass_inverse * &tau_n;
        assert!(force.norm() < 1e-9, "{}", force.norm());
        let p = model.null_space_projector();
        assert!((&p * &p - &p).amax() < 1e-9);
    }
}

#[test]
fn disabled_sources_leave_compensation_only() {
    let arm = ArmParams::default();
    let state = tool_down_state(&arm);
    let config = ControllerConfig {
        sources: SourceMask { vmp: false, force: false, direction: false, torque: false },
        ..ControllerConfig::default()
    };
    let mut ctl = controller(config, &state);
    let (tau, tel) = ctl
        .control_tick(&state, &Vector3::new(0.5, 8.0, 0.0), &TaskTargets::default(), ControlMode::Normal, 0.0, 1e-3)
        .unwrap();
    assert_eq!(tel.v_d, Vector3::zeros());
    assert_eq!(tel.f_m, Vector3::zeros());
    let model = task_space_matrices(&state, &arm, &SingularityPolicy::default()).unwrap();
    let posture = Posture { rest: state.q.clone(), stiffness: 5.0, damping: 0.5 };
    assert_eq!(tau, torque_command(&Vector3::zeros(), &model, &state, &posture));
}

#[test]
fn tick_is_deterministic_and_telemetry_consistent() {
    let arm = ArmParams::default();
    let mut state = tool_down_state(&arm);
    state.qdot = DVector::from_vec(vec![0.1, -0.2, 0.05]);
    let config = ControllerConfig {
        sources: SourceMask { vmp: true, force: true, direction: true, torque: true },
        ..ControllerConfig::default()
    };
    let mut a = controller(config.clone(), &state);
    let mut b = a.clone();
    let targets = TaskTargets { torque_nm: 0.2, ..TaskTargets::default() };
    for k in 0..50 {
        let t = k as f64 * 1e-3;
        let f = Vector3::new(0.3 * (k as f64).sin(), 9.0 + 0.1 * k as f64, 0.05);
        let (ta, la) = a.control_tick(&state, &f, &targets, ControlMode::Normal, t, 1e-3).unwrap();
        let (tb, lb) = b.control_tick(&state, &f, &targets, ControlMode::Normal, t, 1e-3).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(la, lb);
        assert_eq!(la.v_d, la.v_vmp + la.v_f + la.v_r + la.v_t);
        for (v, clamp) in [(la.v_f.norm(), 0.2), (la.v_r.norm(), 1.0), (la.v_t.norm(), 1.0)] {
            assert!(v <= clamp + 1e-15);
        }
    }
}

#[test]
fn adaptive_mode_scales_gains_and_stalls_phase() {
    let arm = ArmParams::default();
    let state = tool_down_state(&arm);
    let mut ctl = controller(ControllerConfig::default(), &state);
    let f = Vector3::new(0.0, 10.0, 0.0);
    let targets = TaskTargets::default();
    let dt = 1e-3;
    let mut t = 0.0;
    for _ in 0..100 {
        ctl.control_tick(&state, &f, &targets, ControlMode::Normal, t, dt).unwrap();
        t += dt;
    }
    let before = ctl.motion_time();
    for _ in 0..400 {
        let (_, tel) = ctl.control_tick(&state, &f, &targets, ControlMode::Adaptive, t, dt).unwrap();
        assert!(tel.gain_scale <= 1.0);
        t += dt;
    }
    assert_eq!(ctl.schedule().fraction(0), 0.0);
    assert!(ctl.motion_time() - before < 0.16);
    let stalled = ctl.motion_time();
    ctl.control_tick(&state, &f, &targets, ControlMode::Adaptive, t, dt).unwrap();
    assert_eq!(ctl.motion_time(), stalled);
    assert!(!ctl.gains_recovered());
}
