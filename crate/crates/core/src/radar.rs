//! Electronically scanned array radar environment.
//!
//! Angles are azimuths measured from the +x axis (the array boresight) with
//! the quadrant-aware `atan2`; scenarios keep targets in the front half-plane.
//! The state of a target is `(rx, ry, vx, vy)` in metres and metres/second.

use crate::detection;
use crate::error::{Error, Result};
use crate::filter::FilterStatistics;
use crate::pomdp::{Jacobian, ModelState, ObservationModel, TransitionModel};
use crate::rng::{normals_from_uniforms, NoiseStream};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TargetState {
    pub rx: f64,
    pub ry: f64,
    pub vx: f64,
    pub vy: f64,
}

impl TargetState {
    pub fn new(rx: f64, ry: f64, vx: f64, vy: f64) -> Self {
        Self { rx, ry, vx, vy }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.rx, self.ry, self.vx, self.vy]
    }
}

impl ModelState for TargetState {
    fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Beam azimuth `theta` (radians) and dwell `delta` (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarAction {
    pub theta: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarConstants {
    /// Collapsed sensor coefficient of the SNR, m⁴/s.
    pub kappa: f64,
    /// Beamwidth B, radians.
    pub beamwidth: f64,
    pub pfa: f64,
    pub sigma_r: f64,
    pub sigma_beta: f64,
    pub sigma_rdot: f64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

impl RadarConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa", self.kappa),
            ("beamwidth", self.beamwidth),
            ("sigma_r", self.sigma_r),
            ("sigma_beta", self.sigma_beta),
            ("sigma_rdot", self.sigma_rdot),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("radar.{name} must be positive, got {v}")));
            }
        }
        if !(self.pfa > 0.0 && self.pfa < 1.0) {
            return Err(Error::Config(format!("radar.pfa must lie in (0, 1), got {}", self.pfa)));
        }
        if !self.position.iter().chain(&self.velocity).all(|v| v.is_finite()) {
            return Err(Error::Config("radar position/velocity must be finite".into()));
        }
        Ok(())
    }
}

/// Range of admissible dwells and the fixed per-look overhead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellLimits {
    pub delta_min: f64,
    pub delta_max: f64,
    pub overhead: f64,
}

impl DwellLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_min > 0.0 && self.delta_max > self.delta_min && self.delta_max.is_finite()) {
            return Err(Error::Config(format!(
                "dwell limits must satisfy 0 < delta_min < delta_max, got [{}, {}]",
                self.delta_min, self.delta_max
            )));
        }
        if !(self.overhead >= 0.0 && self.overhead.is_finite()) {
            return Err(Error::Config(format!("overhead must be >= 0, got {}", self.overhead)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TargetObservation {
    Detection { r: f64, beta: f64, rdot: f64 },
    Miss,
}

impl TargetObservation {
    pub fn is_detection(&self) -> bool {
        matches!(self, TargetObservation::Detection { .. })
    }
}

/// Target position/velocity relative to the radar.
#[derive(Debug, Clone, Copy)]
struct Relative {
    dx: f64,
    dy: f64,
    dvx: f64,
    dvy: f64,
    range: f64,
}

fn relative(x: &TargetState, c: &RadarConstants) -> Result<Relative> {
    let dx = x.rx - c.position[0];
    let dy = x.ry - c.position[1];
    let range = dx.hypot(dy);
    if !(range > 0.0) {
        return Err(Error::Domain(format!("target co-located with the radar: {x:?}")));
    }
    Ok(Relative {
        dx,
        dy,
        dvx: x.vx - c.velocity[0],
        dvy: x.vy - c.velocity[1],
        range,
    })
}

/// Noise-free measurement `h(x) = (range, azimuth, range rate)`.
pub fn measurement_function(x: &TargetState, c: &RadarConstants) -> Result<[f64; 3]> {
    let rel = relative(x, c)?;
    Ok([
        rel.range,
        rel.dy.atan2(rel.dx),
        (rel.dx * rel.dvx + rel.dy * rel.dvy) / rel.range,
    ])
}

/// Wraps an angle difference into [-π, π).
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// SNR `ρ = κ δ cos²θ / r⁴ · exp(-(β-θ)²/(2B²))`.
///
/// The scan loss cos²θ and the beam-shape term both depend on θ, so for a
/// target off boresight the SNR-maximising θ sits slightly inside β (towards
/// boresight) rather than exactly on it.
pub fn snr(x: &TargetState, a: &RadarAction, c: &RadarConstants) -> Result<f64> {
    Ok(snr_and_grad(x, a, c)?.0)
}

/// (ρ, ∂ρ/∂θ, ∂ρ/∂δ)
fn snr_and_grad(x: &TargetState, a: &RadarAction, c: &RadarConstants) -> Result<(f64, f64, f64)> {
    let rel = relative(x, c)?;
    let beta = rel.dy.atan2(rel.dx);
    let r2 = rel.range * rel.range;
    let (sin_t, cos_t) = a.theta.sin_cos();
    let off = wrap_angle(beta - a.theta);
    let b2 = c.beamwidth * c.beamwidth;
    let beam = (-off * off / (2.0 * b2)).exp();
    let scale = c.kappa / (r2 * r2) * beam;
    let rho = scale * a.delta * cos_t * cos_t;
    // d/dθ [cos²θ e^{-(β-θ)²/2B²}] = e^{..} (-2 sinθ cosθ + cos²θ (β-θ)/B²)
    let d_theta = scale * a.delta * (-2.0 * sin_t * cos_t + cos_t * cos_t * off / b2);
    let d_delta = scale * cos_t * cos_t;
    Ok((rho, d_theta, d_delta))
}

/// Swerling-I detection probability; shares its implementation with
/// [`detection::swerling1_pd`].
pub fn detection_probability(rho: f64, pfa: f64) -> Result<f64> {
    detection::swerling1_pd(rho, pfa)
}

/// Independent Bernoulli(P_d) detection flags, one per target.
pub fn sample_detections(
    states: &[TargetState],
    a: &RadarAction,
    c: &RadarConstants,
    stream: &mut NoiseStream,
) -> Result<Vec<bool>> {
    let ln_pfa = c.pfa.ln();
    states
        .iter()
        .map(|x| {
            let rho = snr(x, a, c)?;
            Ok(stream.uniform() < detection::pd_unchecked(rho, ln_pfa))
        })
        .collect()
}

/// Noisy measurement `h(x) + W`, `W ~ N(0, diag(σ_r², σ_β², σ_ṙ²))`.
pub fn measure(x: &TargetState, c: &RadarConstants, stream: &mut NoiseStream) -> Result<[f64; 3]> {
    let mut u = [0.0; 4];
    stream.fill_uniform(&mut u);
    measure_from_uniforms(x, c, &u, 1.0)
}

fn measure_from_uniforms(x: &TargetState, c: &RadarConstants, u: &[f64], noise_scale: f64) -> Result<[f64; 3]> {
    let h = measurement_function(x, c)?;
    let mut z = [0.0; 3];
    normals_from_uniforms(u, &mut z);
    Ok([
        h[0] + noise_scale * c.sigma_r * z[0],
        h[1] + noise_scale * c.sigma_beta * z[1],
        h[2] + noise_scale * c.sigma_rdot * z[2],
    ])
}

fn gaussian_log_density(y: [f64; 3], h: [f64; 3], c: &RadarConstants) -> f64 {
    let e0 = (y[0] - h[0]) / c.sigma_r;
    let e1 = wrap_angle(y[1] - h[1]) / c.sigma_beta;
    let e2 = (y[2] - h[2]) / c.sigma_rdot;
    -0.5 * (e0 * e0 + e1 * e1 + e2 * e2)
        - 1.5 * (2.0 * PI).ln()
        - (c.sigma_r * c.sigma_beta * c.sigma_rdot).ln()
}

/// Mixed density `g(y | x, a)`: `N(y; h(x), Σ_y) P_d` for a detection and
/// `1 - P_d` for a miss, against λ_cont + λ_disc.
pub fn observation_density(y: &TargetObservation, x: &TargetState, a: &RadarAction, c: &RadarConstants) -> Result<f64> {
    Ok(observation_log_density(y, x, a, c)?.exp())
}

pub fn observation_log_density(
    y: &TargetObservation,
    x: &TargetState,
    a: &RadarAction,
    c: &RadarConstants,
) -> Result<f64> {
    let rho = snr(x, a, c)?;
    let ln_pfa = c.pfa.ln();
    Ok(match *y {
        TargetObservation::Detection { r, beta, rdot } => {
            let h = measurement_function(x, c)?;
            gaussian_log_density([r, beta, rdot], h, c) + ln_pfa / (1.0 + rho)
        }
        TargetObservation::Miss => detection::miss_unchecked(rho, ln_pfa).ln(),
    })
}

/// `(∂g/∂θ, ∂g/∂δ)`. Only P_d depends on the action.
pub fn observation_density_grad_action(
    y: &TargetObservation,
    x: &TargetState,
    a: &RadarAction,
    c: &RadarConstants,
) -> Result<[f64; 2]> {
    let (rho, d_theta, d_delta) = snr_and_grad(x, a, c)?;
    let dpd = detection::dpd_dsnr_unchecked(rho, c.pfa.ln());
    Ok(match *y {
        TargetObservation::Detection { r, beta, rdot } => {
            let gauss = gaussian_log_density([r, beta, rdot], measurement_function(x, c)?, c).exp();
            [gauss * dpd * d_theta, gauss * dpd * d_delta]
        }
        TargetObservation::Miss => [-dpd * d_theta, -dpd * d_delta],
    })
}

/// `∂ ln g / ∂(θ, δ)`, computed without forming g.
pub fn observation_score_action(
    y: &TargetObservation,
    x: &TargetState,
    a: &RadarAction,
    c: &RadarConstants,
) -> Result<[f64; 2]> {
    let (rho, d_theta, d_delta) = snr_and_grad(x, a, c)?;
    let ln_pfa = c.pfa.ln();
    let one_plus = 1.0 + rho;
    // ∂ ln P_d / ∂ρ = -ln(pfa) / (1+ρ)²
    let dlog_pd = -ln_pfa / (one_plus * one_plus);
    let factor = match y {
        TargetObservation::Detection { .. } => dlog_pd,
        TargetObservation::Miss => {
            let pd = detection::pd_unchecked(rho, ln_pfa);
            -pd * dlog_pd / detection::miss_unchecked(rho, ln_pfa)
        }
    };
    Ok([factor * d_theta, factor * d_delta])
}

/// NCV transition matrix F(β) on `(rx, ry, vx, vy)`.
pub fn ncv_transition_matrix(dt: f64) -> [[f64; 4]; 4] {
    [
        [1.0, 0.0, dt, 0.0],
        [0.0, 1.0, 0.0, dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// Unit-intensity NCV process covariance Q(β).
pub fn ncv_process_covariance(dt: f64) -> [[f64; 4]; 4] {
    let q11 = dt * dt * dt / 3.0;
    let q12 = dt * dt / 2.0;
    [
        [q11, 0.0, q12, 0.0],
        [0.0, q11, 0.0, q12],
        [q12, 0.0, dt, 0.0],
        [0.0, q12, 0.0, dt],
    ]
}

/// `x' = F x + w`, `w ~ N(0, σ² Q(dt))`, from four uniforms.
pub fn propagate_ncv_from_uniforms(x: &TargetState, dt: f64, sigma: f64, u: &[f64]) -> TargetState {
    let mut z = [0.0; 4];
    normals_from_uniforms(u, &mut z);
    // per-axis Cholesky factor of [[β³/3, β²/2], [β²/2, β]]
    let l11 = (dt * dt * dt / 3.0).sqrt();
    let l21 = (3.0 * dt).sqrt() / 2.0;
    let l22 = dt.sqrt() / 2.0;
    TargetState {
        rx: x.rx + dt * x.vx + sigma * l11 * z[0],
        ry: x.ry + dt * x.vy + sigma * l11 * z[1],
        vx: x.vx + sigma * (l21 * z[0] + l22 * z[2]),
        vy: x.vy + sigma * (l21 * z[1] + l22 * z[3]),
    }
}

pub fn propagate_ncv(x: &TargetState, dt: f64, sigma: f64, stream: &mut NoiseStream) -> Result<TargetState> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    let mut u = [0.0; 4];
    stream.fill_uniform(&mut u);
    Ok(propagate_ncv_from_uniforms(x, dt, sigma, &u))
}

/// NCV target: Gaussian initial law around `initial`, process intensity `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcvModel {
    pub initial: TargetState,
    pub initial_std_position: f64,
    pub initial_std_velocity: f64,
    pub sigma: f64,
}

impl TransitionModel for NcvModel {
    type State = TargetState;

    fn noise_dim(&self) -> usize {
        4
    }

    fn init(&self, noise: &[f64]) -> TargetState {
        let mut z = [0.0; 4];
        normals_from_uniforms(noise, &mut z);
        TargetState {
            rx: self.initial.rx + self.initial_std_position * z[0],
            ry: self.initial.ry + self.initial_std_position * z[1],
            vx: self.initial.vx + self.initial_std_velocity * z[2],
            vy: self.initial.vy + self.initial_std_velocity * z[3],
        }
    }

    fn step(&self, state: &TargetState, noise: &[f64], dt: f64) -> TargetState {
        propagate_ncv_from_uniforms(state, dt, self.sigma, noise)
    }
}

/// Per-target observation model. With `noiseless` set, sampled detections
/// carry no measurement noise (the density is unchanged).
#[derive(Debug, Clone, PartialEq)]
pub struct RadarObservationModel {
    pub constants: RadarConstants,
    pub noiseless: bool,
}

impl ObservationModel for RadarObservationModel {
    type State = TargetState;
    type Action = RadarAction;
    type Obs = TargetObservation;

    /// One uniform for the detection flag, four for the measurement noise.
    fn noise_dim(&self) -> usize {
        5
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn sample(&self, x: &TargetState, a: &RadarAction, noise: &[f64]) -> TargetObservation {
        let c = &self.constants;
        let Ok(rho) = snr(x, a, c) else {
            return TargetObservation::Detection {
                r: f64::NAN,
                beta: f64::NAN,
                rdot: f64::NAN,
            };
        };
        if noise[0] >= detection::pd_unchecked(rho, c.pfa.ln()) {
            return TargetObservation::Miss;
        }
        let scale = if self.noiseless { 0.0 } else { 1.0 };
        match measure_from_uniforms(x, c, &noise[1..5], scale) {
            Ok([r, beta, rdot]) => TargetObservation::Detection { r, beta, rdot },
            Err(_) => TargetObservation::Detection {
                r: f64::NAN,
                beta: f64::NAN,
                rdot: f64::NAN,
            },
        }
    }

    fn density(&self, y: &TargetObservation, x: &TargetState, a: &RadarAction) -> f64 {
        observation_density(y, x, a, &self.constants).unwrap_or(0.0)
    }

    fn density_grad_action(&self, y: &TargetObservation, x: &TargetState, a: &RadarAction, out: &mut [f64]) {
        let g = observation_density_grad_action(y, x, a, &self.constants).unwrap_or([0.0; 2]);
        out.copy_from_slice(&g);
    }

    fn log_density(&self, y: &TargetObservation, x: &TargetState, a: &RadarAction) -> f64 {
        observation_log_density(y, x, a, &self.constants).unwrap_or(f64::NEG_INFINITY)
    }

    fn score_action(&self, y: &TargetObservation, x: &TargetState, a: &RadarAction, out: &mut [f64]) {
        let s = observation_score_action(y, x, a, &self.constants).unwrap_or([0.0; 2]);
        out.copy_from_slice(&s);
    }

    fn obs_is_finite(&self, y: &TargetObservation) -> bool {
        match *y {
            TargetObservation::Detection { r, beta, rdot } => r.is_finite() && beta.is_finite() && rdot.is_finite(),
            TargetObservation::Miss => true,
        }
    }
}

/// Number of policy parameters of [`ScanPolicy`].
pub const POLICY_DIM: usize = 4;

/// Beam-scheduling policy acting on per-target filter statistics.
///
/// For target p with estimated azimuth β̂_p, range r̂_p and position
/// uncertainty û_p (trace of the particle position covariance plus a small
/// floor, so a cloud collapsed onto one ancestor still has finite ln û):
///
/// ```text
/// w      = softmax_p(α₁ ln û_p + α₂ ln r̂_p)
/// θ      = (π/2) tanh(Σ w_p β̂_p / (π/2))
/// δ      = δ_min + (δ_max - δ_min) σ(α₃ + α₄ Σ w_p ln r̂_p)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPolicy {
    pub limits: DwellLimits,
    pub radar_position: [f64; 2],
    /// Added to the position-covariance trace, m².
    pub uncertainty_floor: f64,
    /// Also differentiate through the filter statistics the features are
    /// built from, using their score-covariance sensitivities. Off, the
    /// statistics are held fixed when forming `∂a/∂α`.
    pub differentiate_statistics: bool,
}

/// `∂(θ, δ)/∂(azimuth, range, uncertainty)` of one target.
pub type FeatureJacobian = [[f64; 3]; 2];

/// Per-target inputs of the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetFeatures {
    pub azimuth: f64,
    pub range: f64,
    pub uncertainty: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ScanPolicy {
    pub fn features(&self, stats: &FilterStatistics) -> Result<TargetFeatures> {
        let dx = stats.mean_f[0] - self.radar_position[0];
        let dy = stats.mean_f[1] - self.radar_position[1];
        let range = dx.hypot(dy);
        let uncertainty = stats.var_f[0] + stats.var_f[1] + self.uncertainty_floor;
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::DegenerateFilter(format!("estimated range {range} is not positive")));
        }
        if !(uncertainty > 0.0 && uncertainty.is_finite()) {
            return Err(Error::DegenerateFilter(format!(
                "position uncertainty {uncertainty} is not positive"
            )));
        }
        Ok(TargetFeatures {
            azimuth: dy.atan2(dx),
            range,
            uncertainty,
        })
    }

    /// Attention weights over targets.
    pub fn attention(alpha: &[f64], features: &[TargetFeatures]) -> Vec<f64> {
        let z: Vec<f64> = features
            .iter()
            .map(|f| alpha[0] * f.uncertainty.ln() + alpha[1] * f.range.ln())
            .collect();
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    }

    pub fn evaluate_features(&self, alpha: &[f64], features: &[TargetFeatures]) -> Result<(RadarAction, Jacobian)> {
        if alpha.len() != POLICY_DIM {
            return Err(Error::Dimension {
                what: "policy parameters",
                expected: POLICY_DIM,
                found: alpha.len(),
            });
        }
        let w = Self::attention(alpha, features);
        let ln_u: Vec<f64> = features.iter().map(|f| f.uncertainty.ln()).collect();
        let ln_r: Vec<f64> = features.iter().map(|f| f.range.ln()).collect();
        let wmean = |v: &[f64]| w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let mean_ln_u = wmean(&ln_u);
        let mean_ln_r = wmean(&ln_r);
        // weighted covariances Σ w_p a_p (b_p - b̄) give ∂(Σ w a)/∂α for the softmax
        let wcov = |a: &[f64], b: &[f64], bbar: f64| {
            w.iter()
                .zip(a.iter().zip(b))
                .map(|(wp, (ap, bp))| wp * ap * (bp - bbar))
                .sum::<f64>()
        };
        let azimuths: Vec<f64> = features.iter().map(|f| f.azimuth).collect();

        let theta_raw = wmean(&azimuths);
        let d_raw = [wcov(&azimuths, &ln_u, mean_ln_u), wcov(&azimuths, &ln_r, mean_ln_r)];
        let t = (theta_raw / FRAC_PI_2).tanh();
        let theta = FRAC_PI_2 * t;
        let dtheta_draw = 1.0 - t * t;

        let level = mean_ln_r;
        let d_level = [wcov(&ln_r, &ln_u, mean_ln_u), wcov(&ln_r, &ln_r, mean_ln_r)];
        let span = self.limits.delta_max - self.limits.delta_min;
        let s = sigmoid(alpha[2] + alpha[3] * level);
        let delta = self.limits.delta_min + span * s;
        let ds = span * s * (1.0 - s);

        let mut jac = Jacobian::zeros(2, POLICY_DIM);
        jac.set(0, 0, dtheta_draw * d_raw[0]);
        jac.set(0, 1, dtheta_draw * d_raw[1]);
        jac.set(1, 0, ds * alpha[3] * d_level[0]);
        jac.set(1, 1, ds * alpha[3] * d_level[1]);
        jac.set(1, 2, ds);
        jac.set(1, 3, ds * level);
        Ok((RadarAction { theta, delta }, jac))
    }

    /// Derivatives of the action with respect to each target's features at fixed α.
    pub fn feature_jacobian(&self, alpha: &[f64], features: &[TargetFeatures]) -> Vec<FeatureJacobian> {
        let w = Self::attention(alpha, features);
        let raw: f64 = w.iter().zip(features).map(|(wp, f)| wp * f.azimuth).sum();
        let level: f64 = w.iter().zip(features).map(|(wp, f)| wp * f.range.ln()).sum();
        let t = (raw / FRAC_PI_2).tanh();
        let dtheta_draw = 1.0 - t * t;
        let span = self.limits.delta_max - self.limits.delta_min;
        let s = sigmoid(alpha[2] + alpha[3] * level);
        let ds = span * s * (1.0 - s);
        w.iter()
            .zip(features)
            .map(|(wp, f)| {
                // softmax logit z_p = α₁ ln û_p + α₂ ln r̂_p
                let draw_dz = wp * (f.azimuth - raw);
                let dlevel_dz = wp * (f.range.ln() - level);
                let dz_dr = alpha[1] / f.range;
                let dz_du = alpha[0] / f.uncertainty;
                [
                    [dtheta_draw * wp, dtheta_draw * draw_dz * dz_dr, dtheta_draw * draw_dz * dz_du],
                    [
                        0.0,
                        ds * alpha[3] * (wp / f.range + dlevel_dz * dz_dr),
                        ds * alpha[3] * dlevel_dz * dz_du,
                    ],
                ]
            })
            .collect()
    }

    /// Score-covariance estimate of `∂(azimuth, range, uncertainty)/∂α`,
    /// one row per feature.
    pub fn feature_sensitivity(&self, stats: &FilterStatistics) -> [Vec<f64>; 3] {
        let dx = stats.mean_f[0] - self.radar_position[0];
        let dy = stats.mean_f[1] - self.radar_position[1];
        let r2 = dx * dx + dy * dy;
        let r = r2.sqrt();
        let mx = stats.mean_sensitivity(0);
        let my = stats.mean_sensitivity(1);
        let vx = stats.variance_sensitivity(0);
        let vy = stats.variance_sensitivity(1);
        let d = mx.len();
        [
            (0..d).map(|j| (dx * my[j] - dy * mx[j]) / r2).collect(),
            (0..d).map(|j| (dx * mx[j] + dy * my[j]) / r).collect(),
            (0..d).map(|j| vx[j] + vy[j]).collect(),
        ]
    }

    /// Action and `∂(θ, δ)/∂α` from one statistics block per target.
    pub fn evaluate(&self, alpha: &[f64], stats: &[FilterStatistics]) -> Result<(RadarAction, Jacobian)> {
        let features = stats.iter().map(|s| self.features(s)).collect::<Result<Vec<_>>>()?;
        let (action, mut jac) = self.evaluate_features(alpha, &features)?;
        if self.differentiate_statistics {
            let fj = self.feature_jacobian(alpha, &features);
            for (st, dfeat) in stats.iter().zip(&fj) {
                let sens = self.feature_sensitivity(st);
                for (row, drow) in dfeat.iter().enumerate() {
                    for j in 0..POLICY_DIM {
                        let extra: f64 = (0..3).map(|k| drow[k] * sens[k][j]).sum();
                        jac.set(row, j, jac.get(row, j) + extra);
                    }
                }
            }
        }
        Ok((action, jac))
    }
}

/// Negative mean squared position error, in units of `length_scale` metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingReward {
    pub length_scale: f64,
}

impl TrackingReward {
    /// `R = -(1/P) Σ_p ‖pos_p - m_p‖² / L²` and `∂R/∂m_p = 2 (pos_p - m_p) / (P L²)`.
    pub fn evaluate(&self, truth: &[TargetState], means: &[&[f64]]) -> (f64, Vec<Vec<f64>>) {
        assert_eq!(truth.len(), means.len(), "target count mismatch");
        let p = truth.len() as f64;
        let l2 = self.length_scale * self.length_scale;
        let mut total = 0.0;
        let grads = truth
            .iter()
            .zip(means)
            .map(|(x, m)| {
                let ex = x.rx - m[0];
                let ey = x.ry - m[1];
                total += ex * ex + ey * ey;
                vec![2.0 * ex / (p * l2), 2.0 * ey / (p * l2)]
            })
            .collect();
        (-total / (p * l2), grads)
    }
}

fn grid_steps(duration: f64, fine_step: f64) -> usize {
    ((duration / fine_step) - 1e-9).ceil().max(1.0) as usize
}

/// `t_{n+1} = t_n + δ + overhead`, rounded up to the fine grid.
pub fn schedule_next_observation(t_n: f64, a: &RadarAction, overhead: f64, fine_step: f64) -> f64 {
    t_n + grid_steps(a.delta + overhead, fine_step) as f64 * fine_step
}

/// Grid-index form of [`schedule_next_observation`].
pub fn next_observation_step(index: usize, a: &RadarAction, overhead: f64, fine_step: f64) -> usize {
    index + grid_steps(a.delta + overhead, fine_step)
}
