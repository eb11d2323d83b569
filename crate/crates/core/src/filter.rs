//! Bootstrap particle filter whose particles carry score accumulators.
//!
//! Besides its state and weight, every particle holds a vector the size of
//! the policy parameter. At an observation the vector is incremented by
//! `∇_α g / g` at that particle. Resampling copies state and accumulator
//! together, so each survivor keeps the likelihood sensitivity of its own
//! ancestry. Weights are stored normalised; updates are done in the log
//! domain so that sharp likelihoods do not underflow.

use crate::error::{Error, Result};
use crate::pomdp::{Jacobian, ModelState, ObservationModel, TransitionModel};
use crate::rng::NoiseStream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ResamplingMode {
    /// Resample after every observation.
    #[default]
    Always,
    /// Resample only when ESS < fraction * N.
    EssThreshold { fraction: f64 },
}

impl ResamplingMode {
    pub fn should_resample(&self, ess: f64, n: usize) -> bool {
        match *self {
            ResamplingMode::Always => true,
            ResamplingMode::EssThreshold { fraction } => ess < fraction * n as f64,
        }
    }
}

/// Borrowed view of one particle.
#[derive(Debug, Clone, Copy)]
pub struct Particle<'a, S> {
    pub state: &'a S,
    pub score: &'a [f64],
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct ParticleCloud<S> {
    states: Vec<S>,
    // row-major, one row of length `score_dim` per particle
    scores: Vec<f64>,
    weights: Vec<f64>,
    score_dim: usize,
    degenerate_increments: usize,
    pre_resample_ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterStatistics {
    /// m(f)
    pub mean_f: Vec<f64>,
    /// Per-component variance of f under the particle measure.
    pub var_f: Vec<f64>,
    /// m(s)
    pub mean_s: Vec<f64>,
    /// m(f s), `mean_fs[c][j]` = mean of f_c * s_j.
    pub mean_fs: Vec<Vec<f64>>,
    /// m((f - m(f))² s), same layout as `mean_fs`.
    pub mean_dev2_s: Vec<Vec<f64>>,
    pub ess: f64,
}

impl<S: ModelState> ParticleCloud<S> {
    /// Builds a cloud from explicit states with uniform weights and zero scores.
    pub fn from_states(states: Vec<S>, score_dim: usize) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Config("a particle cloud needs at least one particle".into()));
        }
        let n = states.len();
        Ok(Self {
            states,
            scores: vec![0.0; n * score_dim],
            weights: vec![1.0 / n as f64; n],
            score_dim,
            degenerate_increments: 0,
            pre_resample_ess: None,
        })
    }

    /// Samples `n` particles from the model's initial law.
    pub fn from_prior<T>(model: &T, n: usize, score_dim: usize, stream: &mut NoiseStream) -> Result<Self>
    where
        T: TransitionModel<State = S>,
    {
        let mut noise = vec![0.0; model.noise_dim()];
        let states = (0..n)
            .map(|_| {
                stream.fill_uniform(&mut noise);
                model.init(&noise)
            })
            .collect();
        Self::from_states(states, score_dim)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn score_dim(&self) -> usize {
        self.score_dim
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn score(&self, i: usize) -> &[f64] {
        &self.scores[i * self.score_dim..(i + 1) * self.score_dim]
    }

    pub fn particle(&self, i: usize) -> Particle<'_, S> {
        Particle {
            state: &self.states[i],
            score: self.score(i),
            weight: self.weights[i],
        }
    }

    /// Number of score increments that were zeroed because g vanished at a
    /// particle while ∂g/∂a did not.
    pub fn degenerate_increments(&self) -> usize {
        self.degenerate_increments
    }

    /// Overwrites the score accumulators (row-major, `len() * score_dim`).
    pub fn set_scores(&mut self, scores: Vec<f64>) -> Result<()> {
        if scores.len() != self.scores.len() {
            return Err(Error::Dimension {
                what: "score accumulators",
                expected: self.scores.len(),
                found: scores.len(),
            });
        }
        self.scores = scores;
        Ok(())
    }

    /// Overwrites the weights; they are renormalised.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.states.len() {
            return Err(Error::Dimension {
                what: "weights",
                expected: self.states.len(),
                found: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Domain("weights must be non-negative with a positive sum".into()));
        }
        self.weights = weights.into_iter().map(|w| w / total).collect();
        Ok(())
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Transition step: every particle moves through the dynamics. Particle
    /// `i` consumes draw window `i` of `stream`. Weights and scores are untouched.
    pub fn predict<T>(&mut self, model: &T, dt: f64, stream: &mut NoiseStream) -> Result<()>
    where
        T: TransitionModel<State = S>,
    {
        let mut noise = vec![0.0; model.noise_dim()];
        for (i, state) in self.states.iter_mut().enumerate() {
            stream.fill_uniform(&mut noise);
            let next = model.step(state, &noise, dt);
            if !next.is_finite() {
                return Err(Error::DegenerateFilter(format!(
                    "particle {i} has a non-finite successor state {next:?}"
                )));
            }
            *state = next;
        }
        Ok(())
    }

    /// Reweights by the observation likelihood and adds `∇_α ln g` to every
    /// score accumulator, with `∇_α g = (∂g/∂a) · policy_jacobian`.
    pub fn update<O>(
        &mut self,
        observation: &O::Obs,
        action: &O::Action,
        model: &O,
        policy_jacobian: &Jacobian,
        observation_index: usize,
    ) -> Result<()>
    where
        O: ObservationModel<State = S>,
    {
        let action_dim = model.action_dim();
        if policy_jacobian.rows() != action_dim || policy_jacobian.cols() != self.score_dim {
            return Err(Error::Dimension {
                what: "policy jacobian",
                expected: action_dim * self.score_dim,
                found: policy_jacobian.rows() * policy_jacobian.cols(),
            });
        }
        let jacobian_is_zero = policy_jacobian.is_zero();
        let mut grad_a = vec![0.0; action_dim];
        let mut log_w = Vec::with_capacity(self.states.len());
        let mut max_log_w = f64::NEG_INFINITY;

        for (i, state) in self.states.iter().enumerate() {
            let lg = model.log_density(observation, state, action);
            let lw = self.weights[i].ln() + lg;
            if lw > max_log_w {
                max_log_w = lw;
            }
            log_w.push(lw);

            if jacobian_is_zero {
                continue;
            }
            let row = &mut self.scores[i * self.score_dim..(i + 1) * self.score_dim];
            if lg == f64::NEG_INFINITY {
                model.density_grad_action(observation, state, action, &mut grad_a);
                if grad_a.iter().any(|g| *g != 0.0) {
                    self.degenerate_increments += 1;
                }
                continue;
            }
            model.score_action(observation, state, action, &mut grad_a);
            policy_jacobian.accumulate_left(&grad_a, row);
        }

        if max_log_w == f64::NEG_INFINITY || max_log_w.is_nan() {
            return Err(Error::FilterCollapse { observation_index });
        }
        let mut total = 0.0;
        for (w, lw) in self.weights.iter_mut().zip(&log_w) {
            *w = (lw - max_log_w).exp();
            total += *w;
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }

    /// Multinomial selection: N i.i.d. indices with P(k = j) = w_j. Each
    /// survivor takes both the state and the score accumulator of its parent.
    /// Weights become uniform. Returns the selection indices.
    pub fn resample_multinomial(&mut self, stream: &mut NoiseStream) -> Vec<usize> {
        let n = self.states.len();
        self.pre_resample_ess = Some(self.ess());
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cumulative.push(acc);
        }
        let total = acc;
        let indices: Vec<usize> = (0..n)
            .map(|_| {
                let u = stream.uniform() * total;
                cumulative.partition_point(|c| *c <= u).min(n - 1)
            })
            .collect();

        let states = indices.iter().map(|&k| self.states[k]).collect();
        let d = self.score_dim;
        let mut scores = Vec::with_capacity(n * d);
        for &k in &indices {
            scores.extend_from_slice(&self.scores[k * d..(k + 1) * d]);
        }
        self.states = states;
        self.scores = scores;
        self.weights.iter_mut().for_each(|w| *w = 1.0 / n as f64);
        indices
    }

    /// Resamples if `mode` asks for it; returns whether it did.
    pub fn maybe_resample(&mut self, mode: ResamplingMode, stream: &mut NoiseStream) -> bool {
        if mode.should_resample(self.ess(), self.len()) {
            self.resample_multinomial(stream);
            true
        } else {
            self.pre_resample_ess = Some(self.ess());
            false
        }
    }

    /// Particle-measure means of f, s and f·s, plus the variance of f. With
    /// uniform weights (i.e. right after resampling) these are the plain
    /// empirical averages.
    pub fn statistics<F>(&self, f_dim: usize, f: F) -> FilterStatistics
    where
        F: Fn(&S, &mut [f64]),
    {
        let d = self.score_dim;
        let n = self.states.len();
        let mut fx = vec![0.0; n * f_dim];
        let mut mean_f = vec![0.0; f_dim];
        let mut mean_s = vec![0.0; d];
        for (i, state) in self.states.iter().enumerate() {
            let w = self.weights[i];
            let row = &mut fx[i * f_dim..(i + 1) * f_dim];
            f(state, row);
            for (m, v) in mean_f.iter_mut().zip(row.iter()) {
                *m += w * v;
            }
            for (acc, sj) in mean_s.iter_mut().zip(&self.scores[i * d..(i + 1) * d]) {
                *acc += w * sj;
            }
        }
        let mut var_f = vec![0.0; f_dim];
        let mut mean_fs = vec![vec![0.0; d]; f_dim];
        let mut mean_dev2_s = vec![vec![0.0; d]; f_dim];
        for i in 0..n {
            let w = self.weights[i];
            let s = &self.scores[i * d..(i + 1) * d];
            for c in 0..f_dim {
                let v = fx[i * f_dim + c];
                let dev2 = (v - mean_f[c]) * (v - mean_f[c]);
                var_f[c] += w * dev2;
                for j in 0..d {
                    mean_fs[c][j] += w * v * s[j];
                    mean_dev2_s[c][j] += w * dev2 * s[j];
                }
            }
        }
        FilterStatistics {
            mean_f,
            var_f,
            mean_s,
            mean_fs,
            mean_dev2_s,
            ess: self.pre_resample_ess.unwrap_or_else(|| self.ess()),
        }
    }
}

impl FilterStatistics {
    /// Estimated sensitivity of m(f_c) to the policy parameters,
    /// `m(f_c s) - m(f_c) m(s)`.
    pub fn mean_sensitivity(&self, c: usize) -> Vec<f64> {
        self.mean_fs[c]
            .iter()
            .zip(&self.mean_s)
            .map(|(fs, s)| fs - self.mean_f[c] * s)
            .collect()
    }

    /// Estimated sensitivity of the variance of f_c, `m((f_c - m_c)² s) - var_c m(s)`.
    pub fn variance_sensitivity(&self, c: usize) -> Vec<f64> {
        self.mean_dev2_s[c]
            .iter()
            .zip(&self.mean_s)
            .map(|(vs, s)| vs - self.var_f[c] * s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamKey};

    /// Scalar model: deterministic drift, likelihood given by a lookup on the
    /// particle index encoded in the state.
    struct Table(Vec<f64>);

    impl ObservationModel for Table {
        type State = f64;
        type Action = f64;
        type Obs = ();
        fn noise_dim(&self) -> usize {
            0
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn sample(&self, _: &f64, _: &f64, _: &[f64]) {}
        fn density(&self, _: &(), x: &f64, a: &f64) -> f64 {
            self.0[*x as usize] * (1.0 + a)
        }
        fn density_grad_action(&self, _: &(), x: &f64, _: &f64, out: &mut [f64]) {
            out[0] = self.0[*x as usize];
        }
    }

    fn stream(i: usize) -> NoiseStream {
        NoiseStream::new(3, StreamKey::new(Purpose::Auxiliary, 0, i))
    }

    #[test]
    fn two_particle_reweighting() {
        let mut cloud = ParticleCloud::from_states(vec![0.0, 1.0], 1).unwrap();
        let jac = Jacobian::zeros(1, 1);
        cloud.update(&(), &0.0, &Table(vec![0.3, 0.1]), &jac, 0).unwrap();
        assert!((cloud.weights()[0] - 0.75).abs() < 1e-15);
        assert!((cloud.weights()[1] - 0.25).abs() < 1e-15);
        assert_eq!(cloud.score(0), &[0.0]);
    }

    #[test]
    fn constant_likelihood_keeps_weights() {
        let mut cloud = ParticleCloud::from_states(vec![0.0, 1.0, 2.0], 1).unwrap();
        cloud.set_weights(vec![0.2, 0.3, 0.5]).unwrap();
        let jac = Jacobian::zeros(1, 1);
        cloud.update(&(), &0.0, &Table(vec![0.4; 3]), &jac, 0).unwrap();
        for (w, e) in cloud.weights().iter().zip([0.2, 0.3, 0.5]) {
            assert!((w - e).abs() < 1e-15);
        }
        assert!((cloud.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scores_follow_the_chain_rule() {
        let mut cloud = ParticleCloud::from_states(vec![0.0, 1.0], 2).unwrap();
        let jac = Jacobian::from_rows(&[vec![2.0, -1.0]]);
        cloud.update(&(), &0.0, &Table(vec![0.3, 0.1]), &jac, 0).unwrap();
        // ∂ ln g / ∂a = 1 at a = 0, times the jacobian row
        assert_eq!(cloud.score(0), &[2.0, -1.0]);
        assert_eq!(cloud.score(1), &[2.0, -1.0]);
    }

    #[test]
    fn zero_likelihood_everywhere_is_a_collapse() {
        let mut cloud = ParticleCloud::from_states(vec![0.0, 1.0], 1).unwrap();
        let err = cloud
            .update(&(), &0.0, &Table(vec![0.0, 0.0]), &Jacobian::zeros(1, 1), 7)
            .unwrap_err();
        assert!(matches!(err, Error::FilterCollapse { observation_index: 7 }));
    }

    #[test]
    fn zero_likelihood_particle_counts_as_degenerate() {
        let mut cloud = ParticleCloud::from_states(vec![0.0, 1.0], 1).unwrap();
        let table = Table(vec![0.0, 0.5]);
        // g(x0) = 0 at a = -1 while ∂g/∂a = 0 there; use a = 0 with a zero
        // table entry instead: g = 0 and ∂g/∂a = 0, so no degeneracy
        cloud.update(&(), &0.0, &table, &Jacobian::from_rows(&[vec![1.0]]), 0).unwrap();
        assert_eq!(cloud.degenerate_increments(), 0);
        assert_eq!(cloud.weights(), &[0.0, 1.0]);

        struct Vanishing;
        impl ObservationModel for Vanishing {
            type State = f64;
            type Action = f64;
            type Obs = ();
            fn noise_dim(&self) -> usize {
                0
            }
            fn action_dim(&self) -> usize {
                1
            }
            fn sample(&self, _: &f64, _: &f64, _: &[f64]) {}
            fn density(&self, _: &(), x: &f64, _: &f64) -> f64 {
                *x
            }
            fn density_grad_action(&self, _: &(), _: &f64, _: &f64, out: &mut [f64]) {
                out[0] = 1.0;
            }
        }
        let mut cloud = ParticleCloud::from_states(vec![0.0, 1.0], 1).unwrap();
        cloud.update(&(), &0.0, &Vanishing, &Jacobian::from_rows(&[vec![1.0]]), 0).unwrap();
        assert_eq!(cloud.degenerate_increments(), 1);
        assert_eq!(cloud.score(0), &[0.0]);
        assert_eq!(cloud.score(1), &[1.0]);
    }

    #[test]
    fn degenerate_weights_copy_one_particle() {
        let mut cloud = ParticleCloud::from_states(vec![5.0, 6.0, 7.0, 8.0], 1).unwrap();
        cloud.set_weights(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let idx = cloud.resample_multinomial(&mut stream(0));
        assert!(idx.iter().all(|&k| k == 0));
        assert!(cloud.states().iter().all(|&s| s == 5.0));
        assert!(cloud.weights().iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn scores_travel_with_states() {
        let n = 50;
        let states: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut cloud = ParticleCloud::from_states(states, 1).unwrap();
        cloud.set_scores((0..n).map(|i| 1000.0 + i as f64).collect()).unwrap();
        cloud.set_weights((0..n).map(|i| (i % 7 + 1) as f64).collect()).unwrap();
        let idx = cloud.resample_multinomial(&mut stream(1));
        for (i, &k) in idx.iter().enumerate() {
            assert_eq!(cloud.states()[i], k as f64);
            assert_eq!(cloud.score(i)[0], 1000.0 + k as f64);
        }
    }

    #[test]
    fn single_particle_statistics() {
        let mut cloud = ParticleCloud::from_states(vec![3.0], 2).unwrap();
        cloud.set_scores(vec![0.5, -2.0]).unwrap();
        let st = cloud.statistics(1, |x, out| out[0] = *x);
        assert_eq!(st.mean_f, vec![3.0]);
        assert_eq!(st.mean_s, vec![0.5, -2.0]);
        assert_eq!(st.mean_fs, vec![vec![1.5, -6.0]]);
        assert_eq!(st.var_f, vec![0.0]);
        assert_eq!(st.ess, 1.0);
    }

    #[test]
    fn zero_scores_give_zero_score_statistics() {
        let cloud = ParticleCloud::from_states(vec![1.0, 2.0, 4.0], 3).unwrap();
        let st = cloud.statistics(1, |x, out| out[0] = *x);
        assert!(st.mean_s.iter().all(|v| *v == 0.0));
        assert!(st.mean_fs[0].iter().all(|v| *v == 0.0));
        assert!((st.mean_f[0] - 7.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ess_gate() {
        let mut cloud = ParticleCloud::from_states(vec![0.0, 1.0], 1).unwrap();
        cloud.set_weights(vec![0.5, 0.5]).unwrap();
        let gate = ResamplingMode::EssThreshold { fraction: 0.75 };
        assert!(!cloud.maybe_resample(gate, &mut stream(2)));
        cloud.set_weights(vec![0.99, 0.01]).unwrap();
        assert!(cloud.maybe_resample(gate, &mut stream(2)));
        assert!(cloud.maybe_resample(ResamplingMode::Always, &mut stream(3)));
    }
}
