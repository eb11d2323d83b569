//! IPA policy-gradient estimation and stochastic gradient ascent.
//!
//! Along one simulated episode, at every fine instant t the estimator adds
//!
//! ```text
//! ∇r_t = Σ_p ∂R/∂m_p · (m_p(f s) - m_p(f) m_p(s)) + r_t s_t
//! ```
//!
//! where `m_p` are the particle averages of target p's cloud, the per-particle
//! `s` are the resampled score accumulators and `s_t` is the score accumulated
//! along the simulated true trajectory. Because the targets' posteriors
//! factorise, the covariance term of target p only involves its own cloud.
//! The time integral is a left Riemann sum on the fine grid, i.e. each
//! instant except the last contributes `fine_step · ∇r_t`.

use crate::error::{Error, Result};
use crate::pomdp::{run_episode, simulate_episode, EpisodeRecord, EpisodeSettings, Environment, StepContext, StepObserver};
use crate::rng::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub alpha: Vec<f64>,
    pub iterate_index: usize,
}

impl PolicyParams {
    pub fn new(alpha: Vec<f64>) -> Self {
        Self { alpha, iterate_index: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    /// Episode return (estimate of J).
    pub value: f64,
    /// `[m(f s)·∂R, -m(f) m(s)·∂R, R s]`, time-integrated; `grad` is their sum.
    pub terms: [Vec<f64>; 3],
}

impl GradientEstimate {
    fn from_terms(terms: [Vec<f64>; 3], value: f64) -> Self {
        let grad = (0..terms[0].len())
            .map(|j| terms[0][j] + terms[1][j] + terms[2][j])
            .collect();
        Self { grad, value, terms }
    }
}

/// Accumulates the three gradient terms while an episode runs.
#[derive(Debug, Clone)]
pub struct IpaAccumulator {
    terms: [Vec<f64>; 3],
    value: f64,
}

impl IpaAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            terms: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]],
            value: 0.0,
        }
    }

    pub fn finish(self) -> GradientEstimate {
        GradientEstimate::from_terms(self.terms, self.value)
    }
}

impl<S> StepObserver<S> for IpaAccumulator {
    fn on_step(&mut self, ctx: &StepContext<'_, S>) -> Result<()> {
        if ctx.is_last {
            return Ok(());
        }
        let dt = ctx.fine_step;
        let d = self.terms[0].len();
        let mut step_terms = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
        for (stats, dr) in ctx.stats.iter().zip(ctx.reward_grad) {
            for (c, drc) in dr.iter().enumerate() {
                for j in 0..d {
                    step_terms[0][j] += drc * stats.mean_fs[c][j];
                    step_terms[1][j] -= drc * stats.mean_f[c] * stats.mean_s[j];
                }
            }
        }
        for (j, s) in ctx.reference_score.iter().enumerate() {
            step_terms[2][j] = ctx.reward * s;
        }
        if step_terms.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                step: ctx.step,
                terms: step_terms,
            });
        }
        for (acc, st) in self.terms.iter_mut().zip(&step_terms) {
            for (a, v) in acc.iter_mut().zip(st) {
                *a += dt * v;
            }
        }
        self.value += dt * ctx.reward;
        Ok(())
    }
}

pub struct IpaEpisode<E: Environment> {
    pub estimate: GradientEstimate,
    pub record: EpisodeRecord<E::State, E::Action, E::Obs>,
}

/// One episode of the IPA estimator, keeping the full record.
pub fn ipa_episode<E: Environment>(
    env: &E,
    alpha: &[f64],
    settings: &EpisodeSettings,
    episode_seed: u64,
) -> Result<IpaEpisode<E>> {
    let mut acc = IpaAccumulator::new(env.param_dim());
    let record = run_episode(env, alpha, settings, episode_seed, &mut acc)?;
    Ok(IpaEpisode {
        estimate: acc.finish(),
        record,
    })
}

pub fn run_ipa_episode<E: Environment>(
    env: &E,
    alpha: &PolicyParams,
    settings: &EpisodeSettings,
    episode_seed: u64,
) -> Result<GradientEstimate> {
    Ok(ipa_episode(env, &alpha.alpha, settings, episode_seed)?.estimate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    /// `η_k = η₀ / (1 + k / k₀)`
    Decaying { eta0: f64, k0: f64 },
    Constant { eta: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Decaying { eta0: 0.05, k0: 50.0 }
    }
}

impl StepSchedule {
    pub fn eta(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Decaying { eta0, k0 } => eta0 / (1.0 + k as f64 / k0),
            StepSchedule::Constant { eta } => eta,
        }
    }
}

/// `α_{k+1} = α_k + η_k ∇J`.
pub fn sga_update(params: &PolicyParams, grad: &[f64], schedule: &StepSchedule) -> Result<PolicyParams> {
    if grad.len() != params.alpha.len() {
        return Err(Error::Dimension {
            what: "gradient",
            expected: params.alpha.len(),
            found: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Domain(format!("non-finite gradient {grad:?}")));
    }
    let eta = schedule.eta(params.iterate_index);
    let alpha: Vec<f64> = params.alpha.iter().zip(grad).map(|(a, g)| a + eta * g).collect();
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::Domain(format!("update produced non-finite parameters {alpha:?}")));
    }
    Ok(PolicyParams {
        alpha,
        iterate_index: params.iterate_index + 1,
    })
}

/// Axis-aligned box Γ for the policy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Config("parameter box needs lower <= upper componentwise".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, alpha: &[f64]) -> bool {
        alpha.len() == self.lower.len()
            && alpha
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(a, (l, u))| a >= l && a <= u)
    }

    /// Clips `alpha` into the box; returns true if any component moved.
    pub fn project(&self, alpha: &mut [f64]) -> bool {
        let mut clipped = false;
        for (a, (l, u)) in alpha.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            let c = a.clamp(*l, *u);
            clipped |= c != *a;
            *a = c;
        }
        clipped
    }
}

/// Batch of IPA episodes at a fixed α.
#[derive(Debug, Clone, Serialize)]
pub struct BatchGradient {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mean_value: f64,
    pub value_stderr: f64,
    pub episodes: usize,
}

/// Runs one IPA episode per seed and averages. Results are reduced in seed
/// order, so the output does not depend on thread scheduling.
pub fn batch_gradient<E: Environment>(
    env: &E,
    alpha: &[f64],
    settings: &EpisodeSettings,
    seeds: &[u64],
) -> Result<(BatchGradient, Vec<GradientEstimate>)> {
    let estimates: Vec<GradientEstimate> = seeds
        .par_iter()
        .map(|&s| ipa_episode(env, alpha, settings, s).map(|e| e.estimate))
        .collect::<Result<_>>()?;
    let grads: Vec<Vec<f64>> = estimates.iter().map(|e| e.grad.clone()).collect();
    let (mean, stderr) = column_mean_stderr(&grads);
    let values: Vec<Vec<f64>> = estimates.iter().map(|e| vec![e.value]).collect();
    let (mv, sv) = column_mean_stderr(&values);
    Ok((
        BatchGradient {
            mean,
            stderr,
            mean_value: mv[0],
            value_stderr: sv[0],
            episodes: seeds.len(),
        },
        estimates,
    ))
}

/// Column means and standard errors of the mean (stderr 0 for one row).
pub fn column_mean_stderr(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let mut stderr = vec![0.0; d];
    if n > 1 {
        for r in rows {
            for ((s, v), m) in stderr.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut stderr {
            *s = (*s / (n as f64 - 1.0) / n as f64).sqrt();
        }
    }
    (mean, stderr)
}

#[derive(Debug, Clone, Serialize)]
pub struct LearningCurveRow {
    pub k: usize,
    pub eta: f64,
    pub mean_return: f64,
    pub return_stderr: f64,
    pub grad_norm: f64,
    /// Parameters the batch was run with.
    pub alpha: Vec<f64>,
    /// Whether the update that followed was clipped to the box.
    pub clipped: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingOptions {
    pub iterations: usize,
    pub batch: usize,
    pub schedule: StepSchedule,
    pub bounds: Option<ParamBox>,
}

/// Seed of episode `b` in iteration `k` of a training run.
pub fn training_seed(seed: u64, k: usize, b: usize) -> u64 {
    derive_seed(seed, &[0x7EA1, k as u64, b as u64])
}

/// Gradient ascent on J(α): each iteration averages the IPA estimate over a
/// batch of episodes, takes one step and projects onto the box.
pub fn train<E: Environment>(
    env: &E,
    settings: &EpisodeSettings,
    alpha0: &[f64],
    opts: &TrainingOptions,
    seed: u64,
) -> Result<(PolicyParams, Vec<LearningCurveRow>)> {
    if opts.iterations == 0 || opts.batch == 0 {
        return Err(Error::Config("training needs iterations >= 1 and batch >= 1".into()));
    }
    let mut params = PolicyParams::new(alpha0.to_vec());
    let mut curve = Vec::with_capacity(opts.iterations);
    for k in 0..opts.iterations {
        let seeds: Vec<u64> = (0..opts.batch).map(|b| training_seed(seed, k, b)).collect();
        let (batch, _) = batch_gradient(env, &params.alpha, settings, &seeds)
            .map_err(|e| e.context(format!("training iteration {k}")))?;
        let eta = opts.schedule.eta(params.iterate_index);
        let used_alpha = params.alpha.clone();
        let mut next = sga_update(&params, &batch.mean, &opts.schedule)
            .map_err(|e| e.context(format!("training iteration {k}")))?;
        let clipped = opts.bounds.as_ref().is_some_and(|b| b.project(&mut next.alpha));
        curve.push(LearningCurveRow {
            k,
            eta,
            mean_return: batch.mean_value,
            return_stderr: batch.value_stderr,
            grad_norm: norm(&batch.mean),
            alpha: used_alpha,
            clipped,
        });
        params = next;
    }
    Ok((params, curve))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine of the angle between `a` and `b`; `None` if either is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FdStep {
    Absolute(f64),
    /// `ε · max(|α_i|, 1)` per coordinate.
    Relative(f64),
}

impl FdStep {
    fn step_for(&self, alpha_i: f64) -> f64 {
        match *self {
            FdStep::Absolute(e) => e,
            FdStep::Relative(e) => e * alpha_i.abs().max(1.0),
        }
    }

    fn epsilon(&self) -> f64 {
        match *self {
            FdStep::Absolute(e) | FdStep::Relative(e) => e,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FdGradient {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub steps: Vec<f64>,
}

/// Central finite differences of the episode return with common random
/// numbers: both sides of every coordinate use the same seed list.
pub fn fd_gradient<E: Environment>(
    env: &E,
    alpha: &[f64],
    settings: &EpisodeSettings,
    step: FdStep,
    seeds: &[u64],
) -> Result<FdGradient> {
    if !(step.epsilon() > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be > 0, got {}", step.epsilon())));
    }
    if seeds.len() < 30 {
        return Err(Error::Domain(format!("at least 30 seeds required, got {}", seeds.len())));
    }
    let d = alpha.len();
    let steps: Vec<f64> = alpha.iter().map(|a| step.step_for(*a)).collect();
    let jobs: Vec<(usize, u64)> = (0..d).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let diffs: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, s)| {
            let mut plus = alpha.to_vec();
            plus[i] += steps[i];
            let mut minus = alpha.to_vec();
            minus[i] -= steps[i];
            let jp = simulate_episode(env, &plus, settings, s)?.total_return;
            let jm = simulate_episode(env, &minus, settings, s)?.total_return;
            Ok((jp - jm) / (2.0 * steps[i]))
        })
        .collect::<Result<_>>()?;
    let mut mean = Vec::with_capacity(d);
    let mut stderr = Vec::with_capacity(d);
    for i in 0..d {
        let col: Vec<Vec<f64>> = diffs[i * seeds.len()..(i + 1) * seeds.len()].iter().map(|v| vec![*v]).collect();
        let (m, s) = column_mean_stderr(&col);
        mean.push(m[0]);
        stderr.push(s[0]);
    }
    Ok(FdGradient { mean, stderr, steps })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub alpha: Vec<f64>,
    pub ipa_mean: Vec<f64>,
    pub ipa_stderr: Vec<f64>,
    pub ipa_episodes: usize,
    pub fd_mean: Vec<f64>,
    pub fd_stderr: Vec<f64>,
    pub fd_steps: Vec<f64>,
    pub fd_seeds: usize,
    /// `None` when either gradient is the zero vector.
    pub cosine: Option<f64>,
    pub threshold: f64,
    /// "pass", "fail" or "both-zero: pass"
    pub status: String,
    pub passed: bool,
}

/// Seeds used by the gradient check: IPA episodes and FD pairs draw from
/// disjoint seed families.
pub fn gradcheck_seeds(seed: u64, ipa_episodes: usize, fd_seeds: usize) -> (Vec<u64>, Vec<u64>) {
    let ipa = (0..ipa_episodes).map(|i| derive_seed(seed, &[0x1FA, i as u64])).collect();
    let fd = (0..fd_seeds).map(|i| derive_seed(seed, &[0xFD, i as u64])).collect();
    (ipa, fd)
}

/// Compares the batch-averaged IPA gradient with the common-random-number
/// finite-difference gradient.
pub fn gradient_check<E: Environment>(
    env: &E,
    alpha: &[f64],
    settings: &EpisodeSettings,
    ipa_seeds: &[u64],
    fd_seeds: &[u64],
    step: FdStep,
    threshold: f64,
) -> Result<GradCheckReport> {
    let (ipa, _) = batch_gradient(env, alpha, settings, ipa_seeds)?;
    let fd = fd_gradient(env, alpha, settings, step, fd_seeds)?;
    let both_zero = ipa.mean.iter().all(|v| *v == 0.0) && fd.mean.iter().all(|v| *v == 0.0);
    let cosine = cosine_similarity(&ipa.mean, &fd.mean);
    let (status, passed) = match cosine {
        _ if both_zero => ("both-zero: pass".to_string(), true),
        Some(c) if c >= threshold => ("pass".to_string(), true),
        _ => ("fail".to_string(), false),
    };
    Ok(GradCheckReport {
        alpha: alpha.to_vec(),
        ipa_mean: ipa.mean,
        ipa_stderr: ipa.stderr,
        ipa_episodes: ipa.episodes,
        fd_mean: fd.mean,
        fd_stderr: fd.stderr,
        fd_steps: fd.steps,
        fd_seeds: fd_seeds.len(),
        cosine,
        threshold,
        status,
        passed,
    })
}
