//! Exact gradient oracle on small discrete hidden Markov models.
//!
//! The emission probabilities are a softmax over observations,
//! `g_α(y | x) ∝ exp(base[x][y] + Σ_j α_j feat[x][y][j])`, and the reward at
//! time t is `R(x_t, m_t) = table[x_t] - c (f(x_t) - m_t)²` with `m_t` the exact
//! posterior mean of `f(x_t)` given `y_1..y_t`.
//!
//! Two independent computations are provided:
//! * [`exact_gradient`] propagates the unnormalised forward vector together
//!   with its derivative in α (forward-mode), enumerating observation
//!   sequences only;
//! * [`decomposition`] enumerates every (state path, observation sequence)
//!   pair and evaluates the three-term expression
//!   `E[∂R·M(fS)] - E[∂R·M(f)M(S)] + E[R S]` directly.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MAX_STATES: usize = 5;
pub const MAX_OBSERVATIONS: usize = 4;
pub const MAX_HORIZON: usize = 4;
pub const TRAJECTORY_LIMIT: u64 = 1_000_000;
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyHmmSpec {
    pub initial: Vec<f64>,
    /// Row-stochastic, `transition[x][x']`.
    pub transition: Vec<Vec<f64>>,
    /// `emission_base[x][y]`
    pub emission_base: Vec<Vec<f64>>,
    /// `emission_features[x][y][j]`
    pub emission_features: Vec<Vec<Vec<f64>>>,
    pub alpha: Vec<f64>,
    pub f_values: Vec<f64>,
    pub reward_table: Vec<f64>,
    pub error_weight: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    /// Gradient of `Σ_{t=0..H} E[R_t]`.
    pub exact_grad: Vec<f64>,
    /// Gradient of each `E[R_t]`, `t = 0..=H`.
    pub per_time: Vec<Vec<f64>>,
    /// `Σ_t E[R_t]`
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Time-summed `[E[∂R·M(fS)], -E[∂R·M(f)M(S)], E[R S]]`.
    pub terms: [Vec<f64>; 3],
    pub per_time: Vec<[Vec<f64>; 3]>,
}

impl Decomposition {
    pub fn sum(&self) -> Vec<f64> {
        (0..self.terms[0].len())
            .map(|j| self.terms[0][j] + self.terms[1][j] + self.terms[2][j])
            .collect()
    }
}

impl TinyHmmSpec {
    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn observations(&self) -> usize {
        self.emission_base.first().map_or(0, Vec::len)
    }

    pub fn param_dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.states();
        let o = self.observations();
        let d = self.param_dim();
        if s == 0 || s > MAX_STATES {
            return Err(Error::Config(format!("state count must be in 1..={MAX_STATES}, got {s}")));
        }
        if o == 0 || o > MAX_OBSERVATIONS {
            return Err(Error::Config(format!("observation count must be in 1..={MAX_OBSERVATIONS}, got {o}")));
        }
        if self.horizon > MAX_HORIZON {
            return Err(Error::Config(format!("horizon must be <= {MAX_HORIZON}, got {}", self.horizon)));
        }
        let stochastic = |row: &[f64]| row.iter().all(|p| *p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-12;
        if !stochastic(&self.initial) {
            return Err(Error::Config("initial distribution must be a probability vector".into()));
        }
        if self.transition.len() != s || self.transition.iter().any(|r| r.len() != s || !stochastic(r)) {
            return Err(Error::Config("transition must be a row-stochastic square matrix".into()));
        }
        if self.emission_base.len() != s || self.emission_base.iter().any(|r| r.len() != o) {
            return Err(Error::Config("emission base must be states x observations".into()));
        }
        if self.emission_features.len() != s
            || self
                .emission_features
                .iter()
                .any(|r| r.len() != o || r.iter().any(|v| v.len() != d))
        {
            return Err(Error::Config("emission features must be states x observations x parameters".into()));
        }
        if self.f_values.len() != s || self.reward_table.len() != s {
            return Err(Error::Config("f_values and reward_table need one entry per state".into()));
        }
        let all_finite = self
            .emission_base
            .iter()
            .flatten()
            .chain(self.emission_features.iter().flatten().flatten())
            .chain(&self.alpha)
            .chain(&self.f_values)
            .chain(&self.reward_table)
            .chain(std::iter::once(&self.error_weight))
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Config("non-finite entry in tiny HMM".into()));
        }
        Ok(())
    }

    /// Number of (state path, observation sequence) pairs at the horizon.
    pub fn trajectory_count(&self) -> u64 {
        let s = self.states() as u64;
        let o = self.observations() as u64;
        let h = self.horizon as u32;
        s.saturating_pow(h + 1).saturating_mul(o.saturating_pow(h))
    }

    fn check_size(&self) -> Result<()> {
        let n = self.trajectory_count();
        if n > TRAJECTORY_LIMIT {
            return Err(Error::TooLarge {
                trajectories: n,
                limit: TRAJECTORY_LIMIT,
            });
        }
        Ok(())
    }

    /// `g_α(· | x)`
    pub fn emission(&self, x: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.observations())
            .map(|y| {
                self.emission_base[x][y]
                    + self.emission_features[x][y]
                        .iter()
                        .zip(&self.alpha)
                        .map(|(f, a)| f * a)
                        .sum::<f64>()
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|v| v / z).collect()
    }

    /// `∂ ln g_α(y | x) / ∂α`
    pub fn emission_score(&self, x: usize, y: usize) -> Vec<f64> {
        let g = self.emission(x);
        (0..self.param_dim())
            .map(|j| {
                let mean: f64 = (0..self.observations()).map(|yy| g[yy] * self.emission_features[x][yy][j]).sum();
                self.emission_features[x][y][j] - mean
            })
            .collect()
    }

    fn reward(&self, x: usize, m: f64) -> (f64, f64) {
        let e = self.f_values[x] - m;
        (self.reward_table[x] - self.error_weight * e * e, 2.0 * self.error_weight * e)
    }
}

/// Visits every sequence in `0..base` of the given length, in lexicographic order.
fn for_each_sequence(len: usize, base: usize, mut visit: impl FnMut(&[usize])) {
    let mut seq = vec![0usize; len];
    loop {
        visit(&seq);
        let mut i = len;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            seq[i] += 1;
            if seq[i] < base {
                break;
            }
            seq[i] = 0;
        }
    }
}

/// Exact `∇_α Σ_t E[R_t]` by forward-mode differentiation of the filter
/// recursion, summed over every observation sequence.
pub fn exact_gradient(spec: &TinyHmmSpec) -> Result<EnumerationResult> {
    spec.validate()?;
    spec.check_size()?;
    let (ns, d) = (spec.states(), spec.param_dim());
    let emissions: Vec<Vec<f64>> = (0..ns).map(|x| spec.emission(x)).collect();
    let demission: Vec<Vec<Vec<f64>>> = (0..ns)
        .map(|x| {
            (0..spec.observations())
                .map(|y| spec.emission_score(x, y).iter().map(|s| s * emissions[x][y]).collect())
                .collect()
        })
        .collect();

    let mut per_time = vec![vec![0.0; d]; spec.horizon + 1];
    let mut value = 0.0;
    for t in 0..=spec.horizon {
        for_each_sequence(t, spec.observations(), |ys| {
            let mut phi = spec.initial.clone();
            let mut dphi = vec![vec![0.0; d]; ns];
            for &y in ys {
                let mut next = vec![0.0; ns];
                let mut dnext = vec![vec![0.0; d]; ns];
                for x2 in 0..ns {
                    let mut pred = 0.0;
                    let mut dpred = vec![0.0; d];
                    for x1 in 0..ns {
                        pred += phi[x1] * spec.transition[x1][x2];
                        for j in 0..d {
                            dpred[j] += dphi[x1][j] * spec.transition[x1][x2];
                        }
                    }
                    next[x2] = pred * emissions[x2][y];
                    for j in 0..d {
                        dnext[x2][j] = dpred[j] * emissions[x2][y] + pred * demission[x2][y][j];
                    }
                }
                phi = next;
                dphi = dnext;
            }
            let py: f64 = phi.iter().sum();
            if py <= 0.0 {
                return;
            }
            let m = phi.iter().zip(&spec.f_values).map(|(p, f)| p * f).sum::<f64>() / py;
            let dm: Vec<f64> = (0..d)
                .map(|j| {
                    let dpy: f64 = dphi.iter().map(|v| v[j]).sum();
                    let dfy: f64 = dphi.iter().zip(&spec.f_values).map(|(v, f)| v[j] * f).sum();
                    (dfy - m * dpy) / py
                })
                .collect();
            for x in 0..ns {
                let (r, dr) = spec.reward(x, m);
                value += phi[x] * r;
                for j in 0..d {
                    per_time[t][j] += dphi[x][j] * r + phi[x] * dr * dm[j];
                }
            }
        });
    }
    let exact_grad = (0..d).map(|j| per_time.iter().map(|g| g[j]).sum()).collect();
    Ok(EnumerationResult {
        exact_grad,
        per_time,
        value,
    })
}

/// The three expectation terms, by enumerating state paths jointly with
/// observation sequences.
pub fn decomposition(spec: &TinyHmmSpec) -> Result<Decomposition> {
    spec.validate()?;
    spec.check_size()?;
    let (ns, d) = (spec.states(), spec.param_dim());
    let emissions: Vec<Vec<f64>> = (0..ns).map(|x| spec.emission(x)).collect();
    let scores: Vec<Vec<Vec<f64>>> = (0..ns)
        .map(|x| (0..spec.observations()).map(|y| spec.emission_score(x, y)).collect())
        .collect();

    let mut per_time = Vec::with_capacity(spec.horizon + 1);
    for t in 0..=spec.horizon {
        let mut terms = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
        for_each_sequence(t, spec.observations(), |ys| {
            // (probability, final state, score) of every path consistent with ys
            let mut paths: Vec<(f64, usize, Vec<f64>)> = Vec::new();
            for_each_sequence(t + 1, ns, |xs| {
                let mut p = spec.initial[xs[0]];
                let mut s = vec![0.0; d];
                for n in 0..t {
                    let x = xs[n + 1];
                    p *= spec.transition[xs[n]][x] * emissions[x][ys[n]];
                    for j in 0..d {
                        s[j] += scores[x][ys[n]][j];
                    }
                }
                if p > 0.0 {
                    paths.push((p, xs[t], s));
                }
            });
            let py: f64 = paths.iter().map(|p| p.0).sum();
            if py <= 0.0 {
                return;
            }
            let mf = paths.iter().map(|(p, x, _)| p * spec.f_values[*x]).sum::<f64>() / py;
            let ms: Vec<f64> = (0..d).map(|j| paths.iter().map(|(p, _, s)| p * s[j]).sum::<f64>() / py).collect();
            let mfs: Vec<f64> = (0..d)
                .map(|j| paths.iter().map(|(p, x, s)| p * spec.f_values[*x] * s[j]).sum::<f64>() / py)
                .collect();
            for (p, x, s) in &paths {
                let (r, dr) = spec.reward(*x, mf);
                for j in 0..d {
                    terms[0][j] += p * dr * mfs[j];
                    terms[1][j] -= p * dr * mf * ms[j];
                    terms[2][j] += p * r * s[j];
                }
            }
        });
        per_time.push(terms);
    }
    let terms = std::array::from_fn(|i| (0..d).map(|j| per_time.iter().map(|t| t[i][j]).sum()).collect());
    Ok(Decomposition { terms, per_time })
}

/// Runs both computations and checks that the three terms add up to the
/// exact gradient, at every time and in total.
pub fn enumerate_oracle(spec: &TinyHmmSpec) -> Result<(EnumerationResult, Decomposition)> {
    let exact = exact_gradient(spec)?;
    let dec = decomposition(spec)?;
    let mut worst: f64 = 0.0;
    for (g, terms) in exact.per_time.iter().zip(&dec.per_time) {
        for j in 0..g.len() {
            worst = worst.max((g[j] - terms[0][j] - terms[1][j] - terms[2][j]).abs());
        }
    }
    for (g, s) in exact.exact_grad.iter().zip(dec.sum()) {
        worst = worst.max((g - s).abs());
    }
    if !(worst <= IDENTITY_TOLERANCE) {
        return Err(Error::DecompositionMismatch { max_abs_diff: worst });
    }
    Ok((exact, dec))
}
