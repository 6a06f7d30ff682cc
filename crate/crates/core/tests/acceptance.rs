//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; exits nonzero if any fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::{energy_mass_matrix, max_rel, random_state};
use compliance_lab::control::ControlMode;
use compliance_lab::detector::grow_ensemble;
use compliance_lab::dynamics::{jacobian, task_space_matrices, ArmParams, RobotState, SingularityPolicy};
use compliance_lab::harness::{
    calibrate, collect_training_data, detector_samples, evaluate, run_scenario, write_json, ControlRow, RunOutput,
    ScenarioConfig,
};
use compliance_lab::model::{
    ensemble_log_density, ensemble_scores, forward, gradients, log_density, log_mean_exp, train, window_nll,
    ModelHyper, ModelParams, Normalization, Weights, Window, SCALE_FLOOR,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_model(hyper: ModelHyper, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Weights::random(&hyper, &mut rng);
    for t in weights.tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let norm = Normalization {
        input_mean: (0..hyper.input_dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
        input_std: (0..hyper.input_dim).map(|_| rng.random_range(0.5..2.0)).collect(),
        target_mean: (0..hyper.output_dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
        target_std: (0..hyper.output_dim).map(|_| rng.random_range(0.5..3.0)).collect(),
    };
    ModelParams { hyper, norm, weights }
}

fn random_window(hyper: &ModelHyper, rng: &mut ChaCha8Rng) -> Window {
    Window {
        velocity: (0..hyper.window * hyper.input_dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
        force: (0..hyper.window * hyper.output_dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
    }
}

const TINY: ModelHyper = ModelHyper {
    hidden: 3,
    components: 2,
    input_dim: 3,
    output_dim: 2,
    window: 4,
};

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let model = random_model(TINY, 101);
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let batch: Vec<Window> = (0..4).map(|_| random_window(&TINY, &mut rng)).collect();
    let mean_nll = |m: &ModelParams| {
        batch.iter().map(|w| -log_density(m, &w.velocity, &w.force).unwrap()).sum::<f64>() / batch.len() as f64
    };
    let (_, grad) = gradients(&model, &batch).unwrap();
    let h = 1e-5;
    let (mut worst, mut count) = (0.0f64, 0);
    for (ti, (_, _, values)) in grad.named().into_iter().enumerate() {
        for (i, a) in values.iter().enumerate() {
            let mut plus = model.clone();
            plus.weights.tensors_mut()[ti][i] += h;
            let mut minus = model.clone();
            minus.weights.tensors_mut()[ti][i] -= h;
            let fd = (mean_nll(&plus) - mean_nll(&minus)) / (2.0 * h);
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            count += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 10.0,
        format!("{count} parameters, worst relative error {worst:.2e}, {secs:.2} s"),
    )
}

fn mixture_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let hyper = ModelHyper {
        hidden: 4,
        components: 3,
        input_dim: 3,
        output_dim: 2,
        window: 5,
    };
    let (mut worst_pi, mut below_floor) = (0.0f64, 0);
    for seed in 0..1000 {
        let mut model = random_model(hyper, 1000 + seed);
        if seed % 4 == 0 {
            // drive some log-scales far down so the floor is reached
            let p = hyper.components * (1 + hyper.output_dim);
            model.weights.head.b[p..].iter_mut().for_each(|b| *b -= 60.0);
        }
        let w = random_window(&hyper, &mut rng);
        let mix = forward(&model, &w.velocity).unwrap();
        for t in 0..hyper.window {
            let s: f64 = mix.weights[t * hyper.components..(t + 1) * hyper.components].iter().sum();
            worst_pi = worst_pi.max((s - 1.0).abs());
        }
        below_floor += mix.scales.iter().filter(|s| **s < SCALE_FLOOR).count();
    }
    let mut worst_nll = 0.0f64;
    for seed in 0..100 {
        let model = random_model(TINY, 5000 + seed);
        let w = random_window(&TINY, &mut rng);
        let mix = forward(&model, &w.velocity).unwrap();
        let mut log_density = 0.0;
        for t in 0..TINY.window {
            let mut step = 0.0;
            for k in 0..TINY.components {
                let mut p = mix.weights[t * TINY.components + k];
                for j in 0..TINY.output_dim {
                    let i = (t * TINY.components + k) * TINY.output_dim + j;
                    let (mu, s) = (mix.means[i], mix.scales[i]);
                    let x = w.force[t * TINY.output_dim + j];
                    p *= (-(x - mu).powi(2) / (2.0 * s * s)).exp() / (s * std::f64::consts::TAU.sqrt());
                }
                step += p;
            }
            log_density += step.ln();
        }
        let nll = window_nll(&mix, &w.force).unwrap();
        worst_nll = worst_nll.max((nll + log_density).abs() / nll.abs().max(1.0));
    }
    outcome(
        worst_pi <= 1e-12 && below_floor == 0 && worst_nll <= 1e-10,
        format!("max |Σπ−1| {worst_pi:.1e}, {below_floor} scales below floor, NLL vs naive product {worst_nll:.1e}"),
    )
}

fn sum_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    let mut worst_mix = 0.0f64;
    let mut violations = 0;
    for case in 0..1000u64 {
        let members = 1 + (case % 4) as usize;
        let models: Vec<ModelParams> = (0..=members).map(|m| random_model(TINY, case * 10 + m as u64)).collect();
        let w = random_window(&TINY, &mut rng);
        let per: Vec<f64> = models.iter().map(|m| log_density(m, &w.velocity, &w.force).unwrap()).collect();
        let (score, _) = ensemble_scores(&models, &w.velocity, &w.force).unwrap();
        let naive = (per.iter().map(|p| p.exp()).sum::<f64>() / per.len() as f64).ln();
        if naive.is_finite() {
            worst_mix = worst_mix.max((score - naive).abs() / naive.abs().max(1.0));
        }
        worst_mix = worst_mix.max((score - log_mean_exp(&per)).abs() / score.abs().max(1.0));
        let before = ensemble_log_density(&models[..members], &w.velocity, &w.force).unwrap();
        let m = members as f64;
        if score < before - ((m + 1.0) / m).ln() - 1e-12 {
            violations += 1;
        }
    }
    outcome(
        worst_mix <= 1e-12 && violations == 0,
        format!("log-mean mismatch {worst_mix:.1e}, {violations}/1000 growth-bound violations"),
    )
}

fn dynamics_oracles() -> Outcome {
    let arm = ArmParams::default();
    let policy = SingularityPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst_lambda = 0.0f64;
    for _ in 0..100 {
        let s = random_state(&mut rng, 3);
        let model = task_space_matrices(&s, &arm, &policy).unwrap();
        let m = energy_mass_matrix(&arm, &s.q);
        let j = jacobian(&arm, &s.q);
        let oracle = (&j * m.try_inverse().unwrap() * j.transpose()).try_inverse().unwrap();
        let lambda = DMatrix::from_column_slice(3, 3, model.inertia.as_slice());
        worst_lambda = worst_lambda.max(max_rel(&lambda, &oracle));
    }
    let redundant = ArmParams {
        link_lengths: vec![0.35, 0.3, 0.25, 0.15],
        link_masses: vec![2.0, 1.5, 1.0, 0.4],
        link_inertias: vec![0.09, 0.05, 0.025, 0.004],
        joint_damping: vec![0.0; 4],
        ..ArmParams::default()
    };
    let (mut worst_idem, mut worst_force, mut checked) = (0.0f64, 0.0f64, 0);
    while checked < 100 {
        let q = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
        let s = RobotState::new(q, DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)));
        let model = task_space_matrices(&s, &redundant, &policy).unwrap();
        if model.singular {
            continue;
        }
        let p = model.null_space_projector();
        worst_idem = worst_idem.max((&p * &p - &p).amax());
        let tau = DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
        let lambda = DMatrix::from_column_slice(3, 3, model.inertia.as_slice());
        worst_force = worst_force.max((lambda * &model.jacobian * &model.mass_inverse * (&p * tau)).amax());
        checked += 1;
    }
    outcome(
        worst_lambda <= 1e-9 && worst_idem <= 1e-9 && worst_force <= 1e-9,
        format!("Λ rel err {worst_lambda:.1e}, P²−P {worst_idem:.1e}, null-space tip force {worst_force:.1e}"),
    )
}

fn force_tracking() -> Outcome {
    let start = Instant::now();
    let config = ScenarioConfig::preset("wiping_flat").unwrap().unwrap();
    let run = run_scenario(&config, &[]).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rmse = run.metrics.force_rmse_n.unwrap_or(f64::INFINITY);
    let period = config.targets.force_period_s;
    let periods = run.metrics.rmse_ticks as f64 * config.dt_s / period;
    let settled = config.evaluation.settle_s >= period;
    outcome(
        rmse <= 1.5 && periods >= 3.0 && settled && run.fault.is_none() && secs < 60.0,
        format!("RMSE {rmse:.3} N over {periods:.1} periods after {:.1} s, {secs:.1} s wall", config.evaluation.settle_s),
    )
}

/// Ensemble built the way the CLI workflow does it: clean collect, train,
/// calibrate on a second clean run.
struct Trained {
    models: Vec<ModelParams>,
    threshold_file: PathBuf,
}

fn train_reference(dir: &Path) -> Trained {
    let mut collect = ScenarioConfig::preset("wiping_flat").unwrap().unwrap();
    collect.duration_s = 60.0;
    let (windows, _) = collect_training_data(&collect).unwrap();
    let (model, _) = train(&windows, collect.detector.window_len, 3, 2, &collect.training).unwrap();
    let models = vec![model];
    let mut clean = ScenarioConfig::preset("wiping_flat").unwrap().unwrap();
    clean.duration_s = 30.0;
    clean.seed = 1;
    let (calibration, _) = calibrate(&clean, &models).unwrap();
    let threshold_file = dir.join("threshold.json");
    write_json(&threshold_file, &calibration).unwrap();
    Trained { models, threshold_file }
}

fn scenario(name: &str, trained: &Trained, seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::preset(name).unwrap().unwrap();
    c.seed = seed;
    c.detector.threshold_file = Some(trained.threshold_file.clone());
    c
}

fn detection(trained: &Trained, runs: &mut Vec<(String, ScenarioConfig, RunOutput)>) -> Outcome {
    let mut hits = 0;
    let mut latencies = Vec::new();
    for seed in 2..12 {
        let config = scenario("collision", trained, seed);
        let run = run_scenario(&config, &trained.models).unwrap();
        let latency = run.metrics.detection_latency_s.first().copied().flatten();
        if latency.is_some_and(|l| l <= 0.14) {
            hits += 1;
        }
        latencies.push(latency.map_or("none".to_string(), |l| format!("{l:.3}")));
        runs.push((format!("collision seed {seed}"), config, run));
    }
    let mut clean = scenario("wiping_flat", trained, 2);
    clean.duration_s = 30.0;
    let run = run_scenario(&clean, &trained.models).unwrap();
    let switches = run.metrics.mode_switches;
    runs.push(("clean 30 s".into(), clean, run));
    outcome(
        hits >= 9 && switches == 0,
        format!("{hits}/10 detected within 0.14 s [{}], {switches} mode switches over 30 s clean", latencies.join(" ")),
    )
}

/// Largest deviation of the logged gain fraction from the linear schedules.
fn schedule_error(control: &[ControlRow], decay_s: f64, recovery_s: f64) -> (f64, bool) {
    let (mut worst, mut fast_enough) = (0.0f64, true);
    let mut seg = 0;
    for k in 1..control.len() {
        if control[k].mode != control[k - 1].mode {
            seg = k;
        }
        let (row, t0) = (&control[k], control[seg].t);
        let k0 = if seg > 0 { control[seg - 1].gain_scale } else { 1.0 };
        let expected = match row.mode {
            ControlMode::Normal => 1.0,
            ControlMode::Adaptive => (k0 - (row.t - t0) / decay_s).max(0.0),
            ControlMode::Recovery => (k0 + (row.t - t0) / recovery_s).min(1.0),
        };
        worst = worst.max((row.gain_scale - expected).abs());
        if row.mode == ControlMode::Adaptive && row.t - t0 >= 0.3 - 1e-9 && row.gain_scale > 0.02 {
            fast_enough = false;
        }
    }
    (worst, fast_enough)
}

fn stiffness_schedule(runs: &[(String, ScenarioConfig, RunOutput)]) -> Outcome {
    let (mut worst, mut fast, mut switches) = (0.0f64, true, 0);
    for (_, config, run) in runs {
        let s = &config.controller.schedule;
        let (err, ok) = schedule_error(&run.control, s.decay_time_s, s.recovery_time_s);
        worst = worst.max(err);
        fast &= ok;
        switches += run.metrics.mode_switches;
    }
    let mut bad = ScenarioConfig::preset("collision").unwrap().unwrap();
    bad.controller.schedule.recovery_time_s = bad.controller.schedule.decay_time_s / 2.0;
    let rejected = bad.validate().is_err();
    outcome(
        worst <= 1e-12 && fast && switches > 0 && rejected,
        format!(
            "max schedule error {worst:.1e} over {switches} switches, ≤2% within 0.3 s: {fast}, fast recovery rejected: {rejected}"
        ),
    )
}

fn returns_to_normal_by(run: &RunOutput, deadline: f64) -> bool {
    let first = run.control.iter().position(|r| r.mode != ControlMode::Normal);
    first.is_some_and(|i| run.control[i..].iter().any(|r| r.mode == ControlMode::Normal && r.t <= deadline))
}

fn stuck_recovery(trained: &Trained, runs: &mut Vec<(String, ScenarioConfig, RunOutput)>) -> Outcome {
    let config = scenario("payload_collision", trained, 0);
    let end = config.perturbations.iter().map(|e| e.end_s()).fold(0.0, f64::max);
    let single = run_scenario(&config, &trained.models).unwrap();
    let single_ok = config.perturbations.len() == 1
        && single.metrics.mode_switches > 0
        && !returns_to_normal_by(&single, end + 10.0);
    let samples = detector_samples(&single.control, config.detector.decimation, &config.perturbations);
    let mut training = config.training;
    training.seed = training.seed.wrapping_add(trained.models.len() as u64);
    let (grown, _) = grow_ensemble(trained.models.clone(), &samples, config.detector.window_len, &training).unwrap();
    let rerun = run_scenario(&config, &grown).unwrap();
    let period = config.targets.force_period_s;
    let advanced = rerun.metrics.motion_after_events_s;
    let rerun_ok = returns_to_normal_by(&rerun, config.duration_s) && advanced >= period;
    let detail = format!(
        "single model: {} switches, back to normal: {}; {} models: recovery {:?} s, {advanced:.2} s of motion after the event",
        single.metrics.mode_switches,
        returns_to_normal_by(&single, config.duration_s),
        grown.len(),
        rerun.metrics.recovery_time_s.first().copied().flatten(),
    );
    runs.push(("payload single".into(), config.clone(), single));
    runs.push(("payload grown".into(), config, rerun));
    outcome(single_ok && rerun_ok, detail)
}

fn unilateral_contact(trained: &Trained, runs: &mut Vec<(String, ScenarioConfig, RunOutput)>) -> Outcome {
    for name in ["wiping_flat", "slope", "step", "arc", "drag", "interruption"] {
        let config = scenario(name, trained, 0);
        let run = run_scenario(&config, &trained.models).unwrap();
        runs.push((name.into(), config, run));
    }
    let (label, min) = runs
        .iter()
        .map(|(l, _, r)| (l.as_str(), r.min_contact_normal_n))
        .fold(("", f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let faults: Vec<&str> = runs.iter().filter(|(_, _, r)| r.fault.is_some()).map(|(l, _, _)| l.as_str()).collect();
    outcome(
        min >= 0.0 && faults.is_empty(),
        format!("min normal force {min:.3e} N ({label}) over {} runs, faults: {faults:?}", runs.len()),
    )
}

fn offline_metrics_agree(runs: &[(String, ScenarioConfig, RunOutput)]) -> bool {
    runs.iter().all(|(_, c, r)| {
        evaluate(&r.control, &r.detector, &c.perturbations, &c.evaluation, c.dt_s).is_ok_and(|m| m == r.metrics)
    })
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_compliance-lab"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    for p in &names {
        let other = b.join(p.file_name().unwrap());
        if std::fs::read(p).ok() != std::fs::read(&other).ok() {
            return Err(format!("{} differs from {}", p.display(), other.display()));
        }
    }
    Ok(names.len())
}

fn determinism(dir: &Path) -> Outcome {
    let result = (|| -> Result<usize, String> {
        let flat = dir.join("flat.toml");
        let col = dir.join("col.toml");
        let base = dir.join("cli");
        let flat_text = compliance_lab::harness::PRESETS
            .iter()
            .find(|(n, _)| *n == "wiping_flat")
            .unwrap()
            .1
            .replace("duration_s = 12.0", "duration_s = 6.0")
            .replace("epochs = 40", "epochs = 2");
        std::fs::write(&flat, flat_text).map_err(|e| e.to_string())?;
        let col_text = compliance_lab::harness::PRESETS
            .iter()
            .find(|(n, _)| *n == "collision")
            .unwrap()
            .1
            .replace("epochs = 40", "epochs = 2")
            .replace(
                "[detector]",
                &format!("[detector]\nthreshold_file = \"{}\"", base.join("A/calibrate/threshold.json").display()),
            );
        std::fs::write(&col, col_text).map_err(|e| e.to_string())?;
        let (f, c) = (flat.to_str().unwrap(), col.to_str().unwrap());
        let mut files = 0;
        for run in ["A", "B"] {
            let out = |sub: &str| base.join(run).join(sub).display().to_string();
            let first = base.join("A");
            let a = |sub: &str| first.join(sub).display().to_string();
            cli(&["collect", "--config", f, "--out", &out("collect")])?;
            cli(&["train", "--config", f, "--dataset", &a("collect/dataset.csv"), "--out", &out("train")])?;
            cli(&["calibrate", "--config", f, "--models", &a("train"), "--seed", "1", "--out", &out("calibrate")])?;
            cli(&["simulate", "--config", c, "--models", &a("train"), "--out", &out("simulate")])?;
            cli(&["grow", "--config", c, "--models", &a("train"), "--log", &a("simulate"), "--out", &out("grow")])?;
            cli(&["evaluate", "--config", c, "--log", &a("simulate"), "--out", &out("evaluate")])?;
            cli(&["plot-data", "--config", c, "--log", &a("simulate"), "--out", &out("plot-data")])?;
        }
        for sub in ["collect", "train", "calibrate", "simulate", "grow", "evaluate", "plot-data"] {
            files += same_files(&base.join("A").join(sub), &base.join("B").join(sub))?;
        }
        Ok(files)
    })();
    match result {
        Ok(n) => outcome(n >= 7, format!("7 subcommands run twice, {n} output files byte-identical")),
        Err(e) => outcome(false, e),
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient check", gradient_check()),
        (2, "mixture sanity", mixture_sanity()),
        (3, "force tracking", force_tracking()),
    ];
    let start = Instant::now();
    let trained = train_reference(dir.path());
    println!("reference ensemble trained and calibrated in {:.1} s", start.elapsed().as_secs_f64());
    let mut runs = Vec::new();
    results.push((4, "detection latency", detection(&trained, &mut runs)));
    let stuck = stuck_recovery(&trained, &mut runs);
    results.push((5, "stiffness schedule", stiffness_schedule(&runs)));
    results.push((6, "stuck recovery fixed by growing", stuck));
    results.push((7, "unilateral contact", unilateral_contact(&trained, &mut runs)));
    results.push((8, "sum-rule ensemble", sum_rule()));
    results.push((9, "CLI determinism", determinism(dir.path())));
    results.push((10, "dynamics oracles", dynamics_oracles()));
    results.sort_by_key(|r| r.0);

    let offline = offline_metrics_agree(&runs);
    println!("offline evaluation matches inline metrics on {} runs: {offline}", runs.len());
    let mut failed = !offline;
    for (n, name, o) in &results {
        println!("{} {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed |= !o.pass;
    }
    if failed {
        std::process::exit(1);
    }
}
