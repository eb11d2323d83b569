//! Generic POMDP pieces and the episode engine.
//!
//! The state process moves on a fine time grid (`fine_step` seconds); the
//! observation/action process only ticks at the observation instants chosen
//! by the environment's scheduler. The engine is written for a state made of
//! `P` independent components (targets) whose observations factorise, so one
//! particle cloud is kept per component.

use crate::error::{Error, Result};
use crate::filter::{FilterStatistics, ParticleCloud, ResamplingMode};
use crate::rng::{NoiseStream, Purpose, StreamKey};
use serde::{Deserialize, Serialize};
use std::fmt::Debug;

pub trait ModelState: Copy + Send + Sync + Debug {
    fn is_finite(&self) -> bool;
}

impl ModelState for f64 {
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// Generative description of the Markov kernel and the initial law. `step`
/// takes no history: the next state is a function of the current state and
/// the noise draw only.
pub trait TransitionModel: Sync {
    type State: ModelState;

    /// Number of uniforms per draw.
    fn noise_dim(&self) -> usize;
    fn init(&self, noise: &[f64]) -> Self::State;
    fn step(&self, state: &Self::State, noise: &[f64], dt: f64) -> Self::State;
}

/// Observation law `g(y | x, a) λ(dy)` with its action gradient.
pub trait ObservationModel: Sync {
    type State;
    type Action;
    type Obs: Clone + Debug + Send;

    fn noise_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn sample(&self, state: &Self::State, action: &Self::Action, noise: &[f64]) -> Self::Obs;
    fn density(&self, y: &Self::Obs, state: &Self::State, action: &Self::Action) -> f64;
    /// ∂g/∂a written into `out` (length `action_dim`).
    fn density_grad_action(&self, y: &Self::Obs, state: &Self::State, action: &Self::Action, out: &mut [f64]);

    fn log_density(&self, y: &Self::Obs, state: &Self::State, action: &Self::Action) -> f64 {
        self.density(y, state, action).ln()
    }

    /// ∂ ln g / ∂a into `out`. Only called where g > 0.
    fn score_action(&self, y: &Self::Obs, state: &Self::State, action: &Self::Action, out: &mut [f64]) {
        let g = self.density(y, state, action);
        self.density_grad_action(y, state, action, out);
        out.iter_mut().for_each(|v| *v /= g);
    }

    fn obs_is_finite(&self, _y: &Self::Obs) -> bool {
        true
    }
}

/// Dense row-major matrix used for `∂a/∂α` (rows: action components,
/// columns: policy parameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jacobian {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Jacobian {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged jacobian");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    /// `out += vᵀ J`.
    #[inline]
    pub fn accumulate_left(&self, v: &[f64], out: &mut [f64]) {
        for (r, vr) in v.iter().enumerate() {
            if *vr == 0.0 {
                continue;
            }
            for (o, j) in out.iter_mut().zip(self.row(r)) {
                *o += vr * j;
            }
        }
    }
}

/// A factorised POMDP: `targets()` independent state components sharing one
/// observation model, a parameterised policy acting on filter statistics, a
/// reward on (true state, filter means), and an observation scheduler.
pub trait Environment: Sync {
    type State: ModelState;
    type Action: Clone + Debug + Send;
    type Obs: Clone + Debug + Send;
    type Transition: TransitionModel<State = Self::State>;
    type Observation: ObservationModel<State = Self::State, Action = Self::Action, Obs = Self::Obs>;

    fn targets(&self) -> usize;
    /// Dynamics of the simulated truth for component `p`.
    fn truth_transition(&self, p: usize) -> &Self::Transition;
    /// Dynamics assumed by the filter for component `p`.
    fn filter_transition(&self, p: usize) -> &Self::Transition {
        self.truth_transition(p)
    }
    fn observation(&self) -> &Self::Observation;
    /// Observation model used to generate data (defaults to the filter's).
    fn sampling_observation(&self) -> &Self::Observation {
        self.observation()
    }

    /// Dimension of the test function f.
    fn f_dim(&self) -> usize;
    fn test_function(&self, state: &Self::State, out: &mut [f64]);

    fn param_dim(&self) -> usize;
    /// Next action and `∂a/∂α` from per-component filter statistics.
    fn policy(&self, alpha: &[f64], stats: &[FilterStatistics]) -> Result<(Self::Action, Jacobian)>;

    /// Reward and `∂R/∂m_p` for every component.
    fn reward(&self, truth: &[Self::State], means: &[&[f64]]) -> (f64, Vec<Vec<f64>>);

    /// Fine-grid index of the next observation after one at `index`.
    fn next_observation(&self, index: usize, action: &Self::Action, fine_step: f64) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSettings {
    pub horizon: f64,
    pub fine_step: f64,
    pub particles: usize,
    pub resampling: ResamplingMode,
}

impl EpisodeSettings {
    /// Number of fine steps, checking that `fine_step` divides `horizon`.
    pub fn fine_steps(&self) -> Result<usize> {
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be >= 0, got {}", self.horizon)));
        }
        if !(self.fine_step > 0.0 && self.fine_step.is_finite()) {
            return Err(Error::Config(format!("fine_step must be > 0, got {}", self.fine_step)));
        }
        let ratio = self.horizon / self.fine_step;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "fine_step {} does not divide horizon {}",
                self.fine_step, self.horizon
            )));
        }
        if self.particles == 0 {
            return Err(Error::Config("at least one particle is required".into()));
        }
        Ok(steps as usize)
    }
}

/// Everything the engine exposes at one fine instant.
pub struct StepContext<'a, S> {
    pub step: usize,
    pub time: f64,
    pub fine_step: f64,
    pub is_last: bool,
    pub truth: &'a [S],
    pub stats: &'a [FilterStatistics],
    /// Score accumulated along the true trajectory.
    pub reference_score: &'a [f64],
    pub reward: f64,
    pub reward_grad: &'a [Vec<f64>],
}

pub trait StepObserver<S> {
    fn on_step(&mut self, ctx: &StepContext<'_, S>) -> Result<()>;
}

pub struct NoObserver;

impl<S> StepObserver<S> for NoObserver {
    fn on_step(&mut self, _: &StepContext<'_, S>) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord<S, A, Y> {
    pub fine_times: Vec<f64>,
    /// True state of every component at every fine instant.
    pub states: Vec<Vec<S>>,
    pub obs_times: Vec<f64>,
    pub obs_steps: Vec<usize>,
    pub actions: Vec<A>,
    pub observations: Vec<Vec<Y>>,
    pub rewards: Vec<f64>,
    /// m_t(f) for every component at every fine instant.
    pub filter_estimates: Vec<Vec<Vec<f64>>>,
    /// Position-variance trace etc. per component at each observation, after the update.
    pub obs_stats: Vec<Vec<FilterStatistics>>,
    /// Reference score at the end of the episode.
    pub final_score: Vec<f64>,
    /// Left Riemann sum of the rewards.
    pub total_return: f64,
    pub degenerate_increments: usize,
}

/// Runs one episode with policy parameter `alpha`. Every stochastic choice
/// is a function of `episode_seed` and the stream keys, so equal inputs give
/// bit-identical records.
pub fn run_episode<E, O>(
    env: &E,
    alpha: &[f64],
    settings: &EpisodeSettings,
    episode_seed: u64,
    observer: &mut O,
) -> Result<EpisodeRecord<E::State, E::Action, E::Obs>>
where
    E: Environment,
    O: StepObserver<E::State>,
{
    let steps = settings.fine_steps()?;
    let dt = settings.fine_step;
    let n_targets = env.targets();
    let d = env.param_dim();
    if alpha.len() != d {
        return Err(Error::Dimension {
            what: "policy parameters",
            expected: d,
            found: alpha.len(),
        });
    }
    let f_dim = env.f_dim();
    let obs_model = env.observation();
    let sampler = env.sampling_observation();
    let action_dim = obs_model.action_dim();

    let stream = |purpose, p: usize, index: usize| NoiseStream::new(episode_seed, StreamKey::new(purpose, p, index));

    let mut truth: Vec<E::State> = (0..n_targets)
        .map(|p| {
            let model = env.truth_transition(p);
            let mut s = stream(Purpose::TruthInit, p, 0);
            let mut noise = vec![0.0; model.noise_dim()];
            s.fill_uniform(&mut noise);
            model.init(&noise)
        })
        .collect();
    check_states(&truth, 0, 0.0)?;

    let mut clouds: Vec<ParticleCloud<E::State>> = (0..n_targets)
        .map(|p| {
            ParticleCloud::from_prior(
                env.filter_transition(p),
                settings.particles,
                d,
                &mut stream(Purpose::ParticleInit, p, 0),
            )
        })
        .collect::<Result<_>>()?;

    let stats_of = |clouds: &[ParticleCloud<E::State>]| -> Vec<FilterStatistics> {
        clouds
            .iter()
            .map(|c| c.statistics(f_dim, |x, out| env.test_function(x, out)))
            .collect()
    };
    let mut stats = stats_of(&clouds);

    let (mut action, mut jacobian) = env.policy(alpha, &stats)?;
    check_jacobian(&jacobian, action_dim, d)?;
    let mut next_obs = env.next_observation(0, &action, dt);
    let mut reference_score = vec![0.0; d];

    let mut record = EpisodeRecord {
        fine_times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        obs_times: Vec::new(),
        obs_steps: Vec::new(),
        actions: Vec::new(),
        observations: Vec::new(),
        rewards: Vec::with_capacity(steps + 1),
        filter_estimates: Vec::with_capacity(steps + 1),
        obs_stats: Vec::new(),
        final_score: Vec::new(),
        total_return: 0.0,
        degenerate_increments: 0,
    };

    let mut obs_buf = vec![0.0; sampler.noise_dim()];
    let mut grad_a = vec![0.0; action_dim];

    for k in 0..=steps {
        let time = k as f64 * dt;
        if k > 0 {
            for p in 0..n_targets {
                let model = env.truth_transition(p);
                let mut s = stream(Purpose::Truth, p, k);
                let mut noise = vec![0.0; model.noise_dim()];
                s.fill_uniform(&mut noise);
                truth[p] = model.step(&truth[p], &noise, dt);
            }
            check_states(&truth, k, time)?;
            for (p, cloud) in clouds.iter_mut().enumerate() {
                cloud
                    .predict(env.filter_transition(p), dt, &mut stream(Purpose::Predict, p, k))
                    .map_err(|e| e.context(format!("target {p}, fine step {k}")))?;
            }

            if k == next_obs {
                let n = record.actions.len();
                let mut ys = Vec::with_capacity(n_targets);
                for p in 0..n_targets {
                    stream(Purpose::Observe, p, n).fill_uniform(&mut obs_buf);
                    let y = sampler.sample(&truth[p], &action, &obs_buf);
                    if !sampler.obs_is_finite(&y) {
                        return Err(Error::NonFinite {
                            step: k,
                            time,
                            quantity: format!("observation of target {p}: {y:?}"),
                        });
                    }
                    // reference score along the true trajectory
                    if obs_model.log_density(&y, &truth[p], &action) > f64::NEG_INFINITY {
                        obs_model.score_action(&y, &truth[p], &action, &mut grad_a);
                        jacobian.accumulate_left(&grad_a, &mut reference_score);
                    }
                    ys.push(y);
                }
                for (p, cloud) in clouds.iter_mut().enumerate() {
                    cloud.update(&ys[p], &action, obs_model, &jacobian, n)?;
                    cloud.maybe_resample(settings.resampling, &mut stream(Purpose::Resample, p, n));
                }
                stats = stats_of(&clouds);
                record.obs_times.push(time);
                record.obs_steps.push(k);
                record.actions.push(action.clone());
                record.observations.push(ys);
                record.obs_stats.push(stats.clone());

                let (a, j) = env.policy(alpha, &stats).map_err(|e| e.context(format!("policy at t = {time} s")))?;
                check_jacobian(&j, action_dim, d)?;
                action = a;
                jacobian = j;
                next_obs = env.next_observation(k, &action, dt);
            } else {
                stats = stats_of(&clouds);
            }
        }

        let means: Vec<&[f64]> = stats.iter().map(|s| s.mean_f.as_slice()).collect();
        let (reward, reward_grad) = env.reward(&truth, &means);
        if !reward.is_finite() {
            return Err(Error::NonFinite {
                step: k,
                time,
                quantity: "reward".into(),
            });
        }
        observer.on_step(&StepContext {
            step: k,
            time,
            fine_step: dt,
            is_last: k == steps,
            truth: &truth,
            stats: &stats,
            reference_score: &reference_score,
            reward,
            reward_grad: &reward_grad,
        })?;
        if k < steps {
            record.total_return += reward * dt;
        }
        record.fine_times.push(time);
        record.states.push(truth.clone());
        record.rewards.push(reward);
        record.filter_estimates.push(stats.iter().map(|s| s.mean_f.clone()).collect());
    }

    record.final_score = reference_score;
    record.degenerate_increments = clouds.iter().map(|c| c.degenerate_increments()).sum();
    Ok(record)
}

/// Runs an episode without any gradient bookkeeping.
pub fn simulate_episode<E: Environment>(
    env: &E,
    alpha: &[f64],
    settings: &EpisodeSettings,
    episode_seed: u64,
) -> Result<EpisodeRecord<E::State, E::Action, E::Obs>> {
    run_episode(env, alpha, settings, episode_seed, &mut NoObserver)
}

fn check_states<S: ModelState>(states: &[S], step: usize, time: f64) -> Result<()> {
    for (p, s) in states.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFinite {
                step,
                time,
                quantity: format!("true state of target {p}: {s:?}"),
            });
        }
    }
    Ok(())
}

fn check_jacobian(j: &Jacobian, rows: usize, cols: usize) -> Result<()> {
    if j.rows() != rows || j.cols() != cols {
        return Err(Error::Dimension {
            what: "policy jacobian",
            expected: rows * cols,
            found: j.rows() * j.cols(),
        });
    }
    Ok(())
}
