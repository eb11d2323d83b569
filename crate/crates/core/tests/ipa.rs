mod common;

use common::{normal_two_sided_p, GaussianWalk, ScalarEnv, ScalarObs, ToyReward};
use esa_ipa::filter::{ParticleCloud, ResamplingMode};
use esa_ipa::ipa::*;
use esa_ipa::rng::{NoiseStream, Purpose, StreamKey};
use esa_ipa::EpisodeSettings;

const WALK: GaussianWalk = GaussianWalk {
    mean: 0.0,
    sd: 1.0,
    drift: 0.2,
    q: 0.5,
};

fn settings(particles: usize, resampling: ResamplingMode) -> EpisodeSettings {
    EpisodeSettings {
        horizon: 1.0,
        fine_step: 0.05,
        particles,
        resampling,
    }
}

fn seeds(tag: u64, n: usize) -> Vec<u64> {
    (0..n).map(|i| esa_ipa::rng::derive_seed(tag, &[i as u64])).collect()
}

#[test]
fn action_independent_observations_give_exactly_zero_gradients() {
    let env = ScalarEnv::new(WALK, ScalarObs::Fixed { sd: 0.5 });
    let st = settings(100, ResamplingMode::Always);
    let (ipa_seeds, fd_seeds) = gradcheck_seeds(3, 20, 30);
    for &s in &ipa_seeds {
        let e = run_ipa_episode(&env, &PolicyParams::new(vec![0.4]), &st, s).unwrap();
        assert_eq!(e.grad, vec![0.0]);
    }
    let fd = fd_gradient(&env, &[0.4], &st, FdStep::Absolute(1e-2), &fd_seeds).unwrap();
    assert_eq!(fd.mean, vec![0.0]);
    let report = gradient_check(&env, &[0.4], &st, &ipa_seeds, &fd_seeds, FdStep::Absolute(1e-2), 0.7).unwrap();
    assert!(report.passed);
    assert_eq!(report.status, "both-zero: pass");
    assert_eq!(report.cosine, None);
}

#[test]
fn constant_reward_gradient_has_zero_mean() {
    let mut env = ScalarEnv::new(WALK, ScalarObs::LogScale);
    env.reward = ToyReward::Constant(2.0);
    let st = settings(50, ResamplingMode::Always);
    let (batch, _) = batch_gradient(&env, &[0.0], &st, &seeds(11, 200)).unwrap();
    let z = batch.mean[0] / batch.stderr[0];
    assert!(batch.stderr[0] > 0.0);
    assert!(normal_two_sided_p(z) > 0.01, "mean {} ± {}", batch.mean[0], batch.stderr[0]);
    assert!((batch.mean_value - 2.0).abs() < 1e-12);
}

#[test]
fn equal_seeds_give_identical_estimates() {
    let env = ScalarEnv::new(WALK, ScalarObs::LogScale);
    let st = settings(80, ResamplingMode::Always);
    let a = run_ipa_episode(&env, &PolicyParams::new(vec![-0.3]), &st, 99).unwrap();
    let b = run_ipa_episode(&env, &PolicyParams::new(vec![-0.3]), &st, 99).unwrap();
    assert_eq!(a, b);
    let s = seeds(5, 16);
    let (x, _) = batch_gradient(&env, &[0.1], &st, &s).unwrap();
    let (y, _) = batch_gradient(&env, &[0.1], &st, &s).unwrap();
    assert_eq!(x.mean, y.mean);
    assert_eq!(x.mean_value, y.mean_value);
}

#[test]
fn terms_add_up_to_the_gradient() {
    let env = ScalarEnv::new(WALK, ScalarObs::LogScale);
    let e = run_ipa_episode(&env, &PolicyParams::new(vec![0.2]), &settings(60, ResamplingMode::Always), 7).unwrap();
    let sum = e.terms[0][0] + e.terms[1][0] + e.terms[2][0];
    assert!((sum - e.grad[0]).abs() < 1e-12 * (1.0 + e.grad[0].abs()));
}

/// Truth sits at 0, the filter believes N(1, 1) with no process noise, the
/// measurement is exact but the filter models it as `N(x, e^{2α})`. Without
/// resampling the posterior weights are `∝ exp(-n x_i² e^{-2α} / 2)` after n
/// observations.
fn deterministic_toy() -> ScalarEnv {
    let truth = GaussianWalk {
        mean: 0.0,
        sd: 0.0,
        drift: 0.0,
        q: 0.0,
    };
    let mut env = ScalarEnv::new(truth, ScalarObs::LogScale);
    env.filter = GaussianWalk {
        mean: 1.0,
        sd: 1.0,
        drift: 0.0,
        q: 0.0,
    };
    env.sampling.noiseless = true;
    env
}

const TOY_PARTICLES: usize = 200;
const TOY_SEED: u64 = 21;

fn toy_settings() -> EpisodeSettings {
    settings(TOY_PARTICLES, ResamplingMode::EssThreshold { fraction: 0.0 })
}

/// Closed-form return and its α-derivative for the deterministic toy.
fn toy_return(env: &ScalarEnv, alpha: f64) -> (f64, f64) {
    let cloud = ParticleCloud::from_prior(
        &env.filter,
        TOY_PARTICLES,
        1,
        &mut NoiseStream::new(TOY_SEED, StreamKey::new(Purpose::ParticleInit, 0, 0)),
    )
    .unwrap();
    let xs = cloud.states();
    let st = toy_settings();
    let steps = st.fine_steps().unwrap();
    let (mut value, mut grad) = (0.0, 0.0);
    for k in 0..steps {
        let n = (k / env.every) as f64;
        let prec = n * (-2.0 * alpha).exp();
        let w: Vec<f64> = xs.iter().map(|x| (-0.5 * prec * x * x).exp()).collect();
        let z: f64 = w.iter().sum();
        let m = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / z;
        // d ln w_i / dα = prec x_i²
        let mq = xs.iter().zip(&w).map(|(x, w)| prec * x * x * w).sum::<f64>() / z;
        let mxq = xs.iter().zip(&w).map(|(x, w)| x * prec * x * x * w).sum::<f64>() / z;
        let dm = mxq - m * mq;
        value += -m * m * st.fine_step;
        grad += -2.0 * m * dm * st.fine_step;
    }
    (value, grad)
}

#[test]
fn deterministic_toy_return_has_closed_form() {
    let env = deterministic_toy();
    for alpha in [-0.5, 0.0, 0.8] {
        let rec = esa_ipa::simulate_episode(&env, &[alpha], &toy_settings(), TOY_SEED).unwrap();
        let (value, _) = toy_return(&env, alpha);
        assert!((rec.total_return - value).abs() < 1e-12, "{} vs {value}", rec.total_return);
    }
}

#[test]
fn finite_differences_match_analytic_derivative_on_deterministic_toy() {
    let env = deterministic_toy();
    let s = vec![TOY_SEED; 30];
    for alpha in [-0.5, 0.0, 0.8] {
        let (_, exact) = toy_return(&env, alpha);
        let fd = fd_gradient(&env, &[alpha], &toy_settings(), FdStep::Absolute(1e-4), &s).unwrap();
        assert!(fd.stderr[0] <= 1e-12 * fd.mean[0].abs());
        let rel = (fd.mean[0] - exact).abs() / exact.abs();
        assert!(rel < 1e-4, "α {alpha}: {} vs {exact}", fd.mean[0]);
    }
}

#[test]
fn finite_differences_are_second_order() {
    let env = deterministic_toy();
    let s = vec![TOY_SEED; 30];
    let alpha = 0.3;
    let (_, exact) = toy_return(&env, alpha);
    let err = |h: f64| fd_gradient(&env, &[alpha], &toy_settings(), FdStep::Absolute(h), &s).unwrap().mean[0] - exact;
    let (e1, e2) = (err(0.1), err(0.05));
    let ratio = e1 / e2;
    assert!((ratio - 4.0).abs() < 0.3, "error ratio {ratio}");
    // Richardson extrapolation removes the leading term
    let rich = (4.0 * (e2 + exact) - (e1 + exact)) / 3.0;
    assert!((rich - exact).abs() < 0.1 * e2.abs());
}

#[test]
fn ipa_agrees_with_finite_differences_for_open_loop_policy() {
    let env = ScalarEnv::new(WALK, ScalarObs::LogScale);
    let st = settings(200, ResamplingMode::Always);
    let alpha = [0.3];
    let (ipa, _) = batch_gradient(&env, &alpha, &st, &seeds(41, 2000)).unwrap();
    let fd = fd_gradient(&env, &alpha, &st, FdStep::Absolute(0.05), &seeds(42, 2000)).unwrap();
    let se = (ipa.stderr[0].powi(2) + fd.stderr[0].powi(2)).sqrt();
    assert!((ipa.mean[0] - fd.mean[0]).abs() < 4.0 * se, "ipa {} ± {}, fd {} ± {}", ipa.mean[0], ipa.stderr[0], fd.mean[0], fd.stderr[0]);
    assert!(ipa.mean[0].abs() > 3.0 * ipa.stderr[0], "gradient not resolved: {} ± {}", ipa.mean[0], ipa.stderr[0]);
}

#[test]
fn fd_rejects_bad_inputs() {
    let env = ScalarEnv::new(WALK, ScalarObs::LogScale);
    let st = settings(10, ResamplingMode::Always);
    assert!(fd_gradient(&env, &[0.0], &st, FdStep::Absolute(0.0), &seeds(1, 30)).is_err());
    assert!(fd_gradient(&env, &[0.0], &st, FdStep::Relative(-1e-3), &seeds(1, 30)).is_err());
    assert!(fd_gradient(&env, &[0.0], &st, FdStep::Absolute(1e-3), &seeds(1, 29)).is_err());
}

#[test]
fn zero_step_size_keeps_parameters_fixed() {
    let env = ScalarEnv::new(WALK, ScalarObs::LogScale);
    let opts = TrainingOptions {
        iterations: 5,
        batch: 4,
        schedule: StepSchedule::Constant { eta: 0.0 },
        bounds: None,
    };
    let (p, curve) = train(&env, &settings(40, ResamplingMode::Always), &[0.7], &opts, 8).unwrap();
    assert_eq!(p.alpha, vec![0.7]);
    assert_eq!(p.iterate_index, 5);
    assert!(curve.iter().all(|r| r.alpha == vec![0.7]));
}

#[test]
fn single_iteration_applies_one_update() {
    let env = ScalarEnv::new(WALK, ScalarObs::LogScale);
    let st = settings(40, ResamplingMode::Always);
    let schedule = StepSchedule::Constant { eta: 0.1 };
    let opts = TrainingOptions {
        iterations: 1,
        batch: 1,
        schedule,
        bounds: None,
    };
    let (p, curve) = train(&env, &st, &[0.2], &opts, 13).unwrap();
    let g = run_ipa_episode(&env, &PolicyParams::new(vec![0.2]), &st, training_seed(13, 0, 0)).unwrap();
    assert_eq!(curve.len(), 1);
    assert_eq!(p.iterate_index, 1);
    assert_eq!(p.alpha, vec![0.2 + 0.1 * g.grad[0]]);
    assert_eq!(curve[0].mean_return, g.value);
}

#[test]
fn bounds_clip_the_update() {
    let env = ScalarEnv::new(WALK, ScalarObs::LogScale);
    let opts = TrainingOptions {
        iterations: 3,
        batch: 2,
        schedule: StepSchedule::Constant { eta: 1e6 },
        bounds: Some(ParamBox::new(vec![-0.5], vec![0.5]).unwrap()),
    };
    let (p, curve) = train(&env, &settings(40, ResamplingMode::Always), &[0.0], &opts, 2).unwrap();
    assert!(p.alpha[0].abs() <= 0.5);
    assert!(curve.iter().any(|r| r.clipped));
}
