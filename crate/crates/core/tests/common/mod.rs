//! Scalar toy models shared by the integration tests.
#![allow(dead_code)]

use esa_ipa::filter::FilterStatistics;
use esa_ipa::pomdp::{Environment, Jacobian, ObservationModel, TransitionModel};
use esa_ipa::rng::normals_from_uniforms;
use esa_ipa::Result;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `x_0 ~ N(mean, sd²)`, `x_{t+dt} = x_t + drift dt + q √dt z`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianWalk {
    pub mean: f64,
    pub sd: f64,
    pub drift: f64,
    pub q: f64,
}

impl TransitionModel for GaussianWalk {
    type State = f64;

    fn noise_dim(&self) -> usize {
        2
    }

    fn init(&self, noise: &[f64]) -> f64 {
        let mut z = [0.0];
        normals_from_uniforms(noise, &mut z);
        self.mean + self.sd * z[0]
    }

    fn step(&self, x: &f64, noise: &[f64], dt: f64) -> f64 {
        let mut z = [0.0];
        normals_from_uniforms(noise, &mut z);
        x + self.drift * dt + self.q * dt.sqrt() * z[0]
    }
}

/// `y = x + σ z` with either a fixed σ or `σ = exp(a)`.
#[derive(Debug, Clone, Copy)]
pub enum ScalarObs {
    Fixed { sd: f64 },
    LogScale,
}

#[derive(Debug, Clone, Copy)]
pub struct ScalarObsModel {
    pub kind: ScalarObs,
    /// Sample `y = x` exactly (density unchanged).
    pub noiseless: bool,
}

impl ScalarObsModel {
    fn sd(&self, a: f64) -> f64 {
        match self.kind {
            ScalarObs::Fixed { sd } => sd,
            ScalarObs::LogScale => a.exp(),
        }
    }
}

impl ObservationModel for ScalarObsModel {
    type State = f64;
    type Action = f64;
    type Obs = f64;

    fn noise_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn sample(&self, x: &f64, a: &f64, noise: &[f64]) -> f64 {
        if self.noiseless {
            return *x;
        }
        let mut z = [0.0];
        normals_from_uniforms(noise, &mut z);
        x + self.sd(*a) * z[0]
    }

    fn density(&self, y: &f64, x: &f64, a: &f64) -> f64 {
        self.log_density(y, x, a).exp()
    }

    fn log_density(&self, y: &f64, x: &f64, a: &f64) -> f64 {
        let sd = self.sd(*a);
        let e = (y - x) / sd;
        -0.5 * e * e - sd.ln() - LN_SQRT_2PI
    }

    fn density_grad_action(&self, y: &f64, x: &f64, a: &f64, out: &mut [f64]) {
        out[0] = match self.kind {
            ScalarObs::Fixed { .. } => 0.0,
            ScalarObs::LogScale => {
                let e = (y - x) / self.sd(*a);
                self.density(y, x, a) * (e * e - 1.0)
            }
        };
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ToyPolicy {
    /// `a = α₀`
    OpenLoop,
    /// `a = α₀ + α₁ m`, with m held fixed in the Jacobian.
    Feedback,
}

#[derive(Debug, Clone, Copy)]
pub enum ToyReward {
    /// `-(x - m)²`
    Tracking,
    Constant(f64),
}

/// One scalar target observed every `every` fine steps.
#[derive(Debug, Clone)]
pub struct ScalarEnv {
    pub truth: GaussianWalk,
    pub filter: GaussianWalk,
    pub obs: ScalarObsModel,
    pub sampling: ScalarObsModel,
    pub every: usize,
    pub policy: ToyPolicy,
    pub reward: ToyReward,
    pub param_dim: usize,
}

impl ScalarEnv {
    pub fn new(walk: GaussianWalk, obs: ScalarObs) -> Self {
        let model = ScalarObsModel { kind: obs, noiseless: false };
        Self {
            truth: walk,
            filter: walk,
            obs: model,
            sampling: model,
            every: 2,
            policy: ToyPolicy::OpenLoop,
            reward: ToyReward::Tracking,
            param_dim: 1,
        }
    }
}

impl Environment for ScalarEnv {
    type State = f64;
    type Action = f64;
    type Obs = f64;
    type Transition = GaussianWalk;
    type Observation = ScalarObsModel;

    fn targets(&self) -> usize {
        1
    }

    fn truth_transition(&self, _: usize) -> &GaussianWalk {
        &self.truth
    }

    fn filter_transition(&self, _: usize) -> &GaussianWalk {
        &self.filter
    }

    fn observation(&self) -> &ScalarObsModel {
        &self.obs
    }

    fn sampling_observation(&self) -> &ScalarObsModel {
        &self.sampling
    }

    fn f_dim(&self) -> usize {
        1
    }

    fn test_function(&self, x: &f64, out: &mut [f64]) {
        out[0] = *x;
    }

    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn policy(&self, alpha: &[f64], stats: &[FilterStatistics]) -> Result<(f64, Jacobian)> {
        let mut jac = Jacobian::zeros(1, self.param_dim);
        let a = match self.policy {
            ToyPolicy::OpenLoop => {
                jac.set(0, 0, 1.0);
                alpha[0]
            }
            ToyPolicy::Feedback => {
                let m = stats[0].mean_f[0];
                jac.set(0, 0, 1.0);
                jac.set(0, 1, m);
                alpha[0] + alpha[1] * m
            }
        };
        Ok((a, jac))
    }

    fn reward(&self, truth: &[f64], means: &[&[f64]]) -> (f64, Vec<Vec<f64>>) {
        match self.reward {
            ToyReward::Tracking => {
                let e = truth[0] - means[0][0];
                (-e * e, vec![vec![2.0 * e]])
            }
            ToyReward::Constant(c) => (c, vec![vec![0.0]]),
        }
    }

    fn next_observation(&self, index: usize, _: &f64, _: f64) -> usize {
        index + self.every
    }
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::new(0.0, 1.0).unwrap();
    2.0 * (1.0 - n.cdf(z.abs()))
}

/// Upper-tail p-value of a chi-square statistic.
pub fn chi_square_p(stat: f64, dof: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

/// Relative error with a floor on the denominator.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
