//! The radar scenario as a [`crate::pomdp::Environment`], plus Monte Carlo
//! policy evaluation.

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::filter::FilterStatistics;
use crate::pomdp::{simulate_episode, EpisodeRecord, EpisodeSettings, Environment, Jacobian};
use crate::radar::{
    next_observation_step, DwellLimits, NcvModel, RadarAction, RadarObservationModel, ScanPolicy, TargetObservation,
    TargetState, TrackingReward, POLICY_DIM,
};
use crate::rng::derive_seed;
use rayon::prelude::*;
use serde::Serialize;

pub type RadarEpisode = EpisodeRecord<TargetState, RadarAction, TargetObservation>;

#[derive(Debug, Clone)]
pub struct RadarEnv {
    truth: Vec<NcvModel>,
    filter: Vec<NcvModel>,
    observation: RadarObservationModel,
    sampling: RadarObservationModel,
    pub policy: ScanPolicy,
    pub reward: TrackingReward,
    pub limits: DwellLimits,
}

impl RadarEnv {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let constants = cfg.radar_constants()?;
        let truth: Vec<NcvModel> = cfg
            .targets
            .iter()
            .map(|t| NcvModel {
                initial: TargetState::from_array(t.initial_state),
                initial_std_position: t.initial_std_position,
                initial_std_velocity: t.initial_std_velocity,
                sigma: t.process_noise,
            })
            .collect();
        let filter = truth
            .iter()
            .map(|m| NcvModel {
                sigma: cfg.filter.process_noise.unwrap_or(m.sigma),
                ..m.clone()
            })
            .collect();
        let limits = cfg.dwell_limits();
        Ok(Self {
            truth,
            filter,
            observation: RadarObservationModel {
                constants: constants.clone(),
                noiseless: false,
            },
            sampling: RadarObservationModel {
                constants: constants.clone(),
                noiseless: cfg.radar.noiseless_measurements,
            },
            policy: ScanPolicy {
                limits,
                radar_position: constants.position,
                uncertainty_floor: cfg.radar.uncertainty_floor,
                differentiate_statistics: cfg.training.differentiate_statistics,
            },
            reward: TrackingReward {
                length_scale: cfg.reward.length_scale,
            },
            limits,
        })
    }

    pub fn observation_model(&self) -> &RadarObservationModel {
        &self.observation
    }
}

impl Environment for RadarEnv {
    type State = TargetState;
    type Action = RadarAction;
    type Obs = TargetObservation;
    type Transition = NcvModel;
    type Observation = RadarObservationModel;

    fn targets(&self) -> usize {
        self.truth.len()
    }

    fn truth_transition(&self, p: usize) -> &NcvModel {
        &self.truth[p]
    }

    fn filter_transition(&self, p: usize) -> &NcvModel {
        &self.filter[p]
    }

    fn observation(&self) -> &RadarObservationModel {
        &self.observation
    }

    fn sampling_observation(&self) -> &RadarObservationModel {
        &self.sampling
    }

    fn f_dim(&self) -> usize {
        2
    }

    fn test_function(&self, x: &TargetState, out: &mut [f64]) {
        out[0] = x.rx;
        out[1] = x.ry;
    }

    fn param_dim(&self) -> usize {
        POLICY_DIM
    }

    fn policy(&self, alpha: &[f64], stats: &[FilterStatistics]) -> Result<(RadarAction, Jacobian)> {
        self.policy.evaluate(alpha, stats)
    }

    fn reward(&self, truth: &[TargetState], means: &[&[f64]]) -> (f64, Vec<Vec<f64>>) {
        self.reward.evaluate(truth, means)
    }

    fn next_observation(&self, index: usize, action: &RadarAction, fine_step: f64) -> usize {
        next_observation_step(index, action, self.limits.overhead, fine_step)
    }
}

/// Index of the target the beam was steered at: the one whose estimated
/// azimuth (before the look) is closest to θ.
pub fn pointed_target(env: &RadarEnv, stats: &[FilterStatistics], action: &RadarAction) -> Option<usize> {
    stats
        .iter()
        .enumerate()
        .filter_map(|(p, s)| env.policy.features(s).ok().map(|f| (p, (f.azimuth - action.theta).abs())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(p, _)| p)
}

/// Target attributed to every look of an episode. The action of look n was
/// chosen from the statistics after look n-1; the first look (chosen from
/// the prior) is not attributed.
pub fn pointed_targets(env: &RadarEnv, rec: &RadarEpisode) -> Vec<Option<usize>> {
    rec.actions
        .iter()
        .enumerate()
        .map(|(n, action)| {
            let stats = if n == 0 { None } else { rec.obs_stats.get(n - 1) };
            stats.and_then(|s| pointed_target(env, s, action))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub episodes: usize,
    pub mean_return: f64,
    /// `None` when fewer than two episodes were run.
    pub stderr: Option<f64>,
    /// Per-target RMS position error over all fine instants and episodes, metres.
    pub rms_position_error: Vec<f64>,
    /// Fraction of (observation, target) pairs that produced a detection.
    pub detection_rate: f64,
    /// Per-target mean dwell over looks steered at that target (`None` if never looked at).
    pub mean_dwell_by_target: Vec<Option<f64>>,
}

/// Mean and standard error of the mean (`None` for a single sample).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Seed of episode `index` of a run with master seed `seed`.
pub fn evaluation_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[0xE7A1, index as u64])
}

pub fn evaluate_policy(
    env: &RadarEnv,
    alpha: &[f64],
    settings: &EpisodeSettings,
    seed: u64,
    episodes: usize,
) -> Result<EvaluationReport> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be >= 1".into()));
    }
    let records: Vec<RadarEpisode> = (0..episodes)
        .into_par_iter()
        .map(|i| simulate_episode(env, alpha, settings, evaluation_seed(seed, i)))
        .collect::<Result<_>>()?;
    Ok(summarize(env, &records))
}

pub fn summarize(env: &RadarEnv, records: &[RadarEpisode]) -> EvaluationReport {
    let targets = env.targets();
    let returns: Vec<f64> = records.iter().map(|r| r.total_return).collect();
    let (mean_return, stderr) = mean_and_stderr(&returns);
    let mut sq = vec![0.0; targets];
    let mut count = 0usize;
    let mut detections = 0usize;
    let mut looks = 0usize;
    let mut dwell_sum = vec![0.0; targets];
    let mut dwell_count = vec![0usize; targets];
    for rec in records {
        for (truth, est) in rec.states.iter().zip(&rec.filter_estimates) {
            for p in 0..targets {
                let ex = truth[p].rx - est[p][0];
                let ey = truth[p].ry - est[p][1];
                sq[p] += ex * ex + ey * ey;
            }
            count += 1;
        }
        for ys in &rec.observations {
            detections += ys.iter().filter(|y| y.is_detection()).count();
            looks += ys.len();
        }
        for (action, p) in rec.actions.iter().zip(pointed_targets(env, rec)) {
            if let Some(p) = p {
                dwell_sum[p] += action.delta;
                dwell_count[p] += 1;
            }
        }
    }
    EvaluationReport {
        episodes: records.len(),
        mean_return,
        stderr,
        rms_position_error: sq.iter().map(|s| (s / count.max(1) as f64).sqrt()).collect(),
        detection_rate: if looks == 0 { 0.0 } else { detections as f64 / looks as f64 },
        mean_dwell_by_target: dwell_sum
            .iter()
            .zip(&dwell_count)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
    }
}
