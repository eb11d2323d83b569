//! Swerling-I threshold detection at the level of the test statistic.
//!
//! The matched-filter output is modelled directly as a complex Gaussian: a
//! signal term with variance `σ_s²` per real/imaginary component (absent
//! under H0) plus receiver noise with variance `σ_n²` per component. The
//! statistic `Λ = |s|² / (2σ_n²)` is exponential with mean `1 + σ_s²/σ_n²`
//! under H1 and mean 1 under H0, which gives `P_fa = e^{-γ}` and
//! `P_d = P_fa^{1/(1+ρ)}` for the threshold test `Λ > γ`.

use crate::error::{Error, Result};
use crate::rng::NoiseStream;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const BOLTZMANN: f64 = 1.380_649e-23;

fn check_pfa(pfa: f64) -> Result<()> {
    if pfa > 0.0 && pfa < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "probability of false alarm must lie in (0, 1), got {pfa}"
        )))
    }
}

fn check_snr(snr: f64) -> Result<()> {
    if snr >= 0.0 && snr.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("SNR must be finite and >= 0, got {snr}")))
    }
}

/// Detection threshold `γ = -ln P_fa`.
pub fn threshold_from_pfa(pfa: f64) -> Result<f64> {
    check_pfa(pfa)?;
    Ok(-pfa.ln())
}

/// Closed-form Swerling-I detection probability `P_fa^{1/(1+ρ)}`.
pub fn swerling1_pd(snr: f64, pfa: f64) -> Result<f64> {
    check_pfa(pfa)?;
    check_snr(snr)?;
    Ok(pd_unchecked(snr, pfa.ln()))
}

/// `exp(ln_pfa / (1 + snr))` without validation; hot-path form.
#[inline]
pub(crate) fn pd_unchecked(snr: f64, ln_pfa: f64) -> f64 {
    (ln_pfa / (1.0 + snr)).exp()
}

/// `1 - P_d`, accurate when `P_d` is close to one.
#[inline]
pub(crate) fn miss_unchecked(snr: f64, ln_pfa: f64) -> f64 {
    -(ln_pfa / (1.0 + snr)).exp_m1()
}

/// `dP_d/dρ = P_d (-ln P_fa) / (1+ρ)²`.
#[inline]
pub(crate) fn dpd_dsnr_unchecked(snr: f64, ln_pfa: f64) -> f64 {
    let one_plus = 1.0 + snr;
    pd_unchecked(snr, ln_pfa) * (-ln_pfa) / (one_plus * one_plus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionTest {
    pub snr_ratio: f64,
    pub pfa: f64,
    pub threshold_gamma: f64,
}

impl DetectionTest {
    pub fn new(snr_ratio: f64, pfa: f64) -> Result<Self> {
        check_snr(snr_ratio)?;
        Ok(Self {
            snr_ratio,
            pfa,
            threshold_gamma: threshold_from_pfa(pfa)?,
        })
    }

    pub fn pd(&self) -> f64 {
        pd_unchecked(self.snr_ratio, self.pfa.ln())
    }

    /// Density of the statistic under H1 (signal present).
    pub fn density_h1(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let mean = 1.0 + self.snr_ratio;
        (-x / mean).exp() / mean
    }

    /// Density of the statistic under H0 (noise only).
    pub fn density_h0(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            (-x).exp()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// Signal plus noise.
    H1,
    /// Noise only.
    H0,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub trials: u64,
}

/// Monte Carlo estimate of the exceedance probability `P(Λ > γ)` by sampling
/// the complex-Gaussian matched-filter output. Under [`Hypothesis::H1`] this
/// estimates `P_d`; under [`Hypothesis::H0`] it estimates `P_fa`.
pub fn mc_pd_estimate(
    snr: f64,
    pfa: f64,
    trials: u64,
    hypothesis: Hypothesis,
    stream: &mut NoiseStream,
) -> Result<MonteCarloEstimate> {
    if trials < 10_000 {
        return Err(Error::Domain(format!(
            "at least 10^4 trials required, got {trials}"
        )));
    }
    let gamma = threshold_from_pfa(pfa)?;
    check_snr(snr)?;
    let sigma_n = 1.0_f64;
    let sigma_s = match hypothesis {
        Hypothesis::H1 => snr.sqrt() * sigma_n,
        Hypothesis::H0 => 0.0,
    };
    let mut hits = 0u64;
    for _ in 0..trials {
        let (sr, si) = stream.standard_normal_pair();
        let (nr, ni) = stream.standard_normal_pair();
        let re = sigma_s * sr + sigma_n * nr;
        let im = sigma_s * si + sigma_n * ni;
        let lambda = (re * re + im * im) / (2.0 * sigma_n * sigma_n);
        if lambda > gamma {
            hits += 1;
        }
    }
    let estimate = hits as f64 / trials as f64;
    let stderr = (estimate * (1.0 - estimate) / trials as f64).sqrt();
    Ok(MonteCarloEstimate {
        estimate,
        stderr,
        trials,
    })
}

/// Physical parameters of the radar equation. `system_temperature` is the
/// noise temperature (kelvin); it is unrelated to the detection threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalRadarParams {
    pub transmit_power: f64,
    pub antenna_gain: f64,
    pub wavelength: f64,
    pub cross_section: f64,
    #[serde(default = "default_boltzmann")]
    pub boltzmann: f64,
    pub system_temperature: f64,
    pub losses: f64,
    #[serde(default = "default_gain_exponent")]
    pub gain_exponent: f64,
}

fn default_boltzmann() -> f64 {
    BOLTZMANN
}

fn default_gain_exponent() -> f64 {
    2.0
}

impl PhysicalRadarParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("transmit_power", self.transmit_power),
            ("antenna_gain", self.antenna_gain),
            ("wavelength", self.wavelength),
            ("cross_section", self.cross_section),
            ("boltzmann", self.boltzmann),
            ("system_temperature", self.system_temperature),
            ("losses", self.losses),
            ("gain_exponent", self.gain_exponent),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "physical radar parameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// One-way array gain at steering angle `theta` off boresight.
    pub fn steered_gain(&self, theta: f64) -> f64 {
        self.antenna_gain * theta.cos().abs().powf(self.gain_exponent)
    }
}

/// Collapses the radar equation into the sensor coefficient
/// `κ = P_t G_0² λ² σ / ((4π)³ k L T_sys)`, so that
/// `ρ = κ δ cos²θ / r⁴ · exp(-(θ-β)²/(2B²))`.
pub fn kappa_from_physical(p: &PhysicalRadarParams) -> Result<f64> {
    p.validate()?;
    let four_pi_cubed = (4.0 * PI).powi(3);
    Ok(
        p.transmit_power * p.antenna_gain * p.antenna_gain * p.wavelength * p.wavelength
            * p.cross_section
            / (four_pi_cubed * p.boltzmann * p.losses * p.system_temperature),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamKey};

    fn unit_params() -> PhysicalRadarParams {
        PhysicalRadarParams {
            transmit_power: 1.0,
            antenna_gain: 1.0,
            wavelength: 1.0,
            cross_section: 1.0,
            boltzmann: 1.0,
            system_temperature: 1.0,
            losses: 1.0,
            gain_exponent: 2.0,
        }
    }

    #[test]
    fn threshold_values() {
        assert!((threshold_from_pfa((-5.0f64).exp()).unwrap() - 5.0).abs() < 1e-12);
        assert!((threshold_from_pfa(1e-4).unwrap() - 4.0 * 10f64.ln()).abs() < 1e-12);
        let near_one = threshold_from_pfa(1.0 - 1e-12).unwrap();
        assert!(near_one > 0.0 && near_one < 1e-11);
        assert!(threshold_from_pfa(0.0).is_err());
        assert!(threshold_from_pfa(1.0).is_err());
    }

    #[test]
    fn threshold_inverts_false_alarm() {
        for p in [1e-9, 1e-6, 1e-4, 1e-2, 0.3, 0.9] {
            let g = threshold_from_pfa(p).unwrap();
            assert!(((-g).exp() - p).abs() <= 4.0 * f64::EPSILON * p);
        }
    }

    #[test]
    fn closed_form_pd() {
        assert!((swerling1_pd(0.0, 1e-4).unwrap() - 1e-4).abs() < 1e-16);
        assert!((swerling1_pd(1.0, 1e-4).unwrap() - 0.01).abs() < 1e-14);
        assert!((swerling1_pd(3.0, 1e-4).unwrap() - 0.1).abs() < 1e-14);
        assert!((swerling1_pd(9.0, 1e-4).unwrap() - 10f64.powf(-0.4)).abs() < 1e-14);
        assert!(swerling1_pd(-1.0, 1e-4).is_err());
        assert!(swerling1_pd(1.0, 1.5).is_err());
    }

    #[test]
    fn pd_is_monotone_in_snr_and_pfa() {
        let snrs = [0.0, 0.5, 1.0, 3.0, 9.0, 30.0, 100.0];
        for pfa in [1e-6, 1e-4, 1e-2] {
            for w in snrs.windows(2) {
                assert!(swerling1_pd(w[1], pfa).unwrap() > swerling1_pd(w[0], pfa).unwrap());
            }
        }
        for snr in snrs {
            assert!(swerling1_pd(snr, 1e-3).unwrap() > swerling1_pd(snr, 1e-5).unwrap());
        }
    }

    #[test]
    fn h1_density_matches_closed_form_tail() {
        let t = DetectionTest::new(4.0, 1e-3).unwrap();
        // integrate the H1 density above the threshold with the trapezoid rule
        let (a, b, n) = (t.threshold_gamma, t.threshold_gamma + 200.0, 400_000);
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (t.density_h1(a) + t.density_h1(b));
        for i in 1..n {
            s += t.density_h1(a + i as f64 * h);
        }
        assert!((s * h - t.pd()).abs() < 1e-8);
    }

    #[test]
    fn mc_matches_closed_form_at_snr_nine() {
        let mut s = NoiseStream::new(5, StreamKey::new(Purpose::Auxiliary, 0, 0));
        let mc = mc_pd_estimate(9.0, 1e-4, 200_000, Hypothesis::H1, &mut s).unwrap();
        let exact = swerling1_pd(9.0, 1e-4).unwrap();
        assert!((mc.estimate - exact).abs() < 3.0 * mc.stderr, "{mc:?} vs {exact}");
    }

    #[test]
    fn mc_refuses_few_trials() {
        let mut s = NoiseStream::new(5, StreamKey::new(Purpose::Auxiliary, 0, 0));
        assert!(mc_pd_estimate(1.0, 0.1, 100, Hypothesis::H1, &mut s).is_err());
    }

    #[test]
    fn kappa_scalings() {
        let base = kappa_from_physical(&unit_params()).unwrap();
        assert!((base - 1.0 / (4.0 * PI).powi(3)).abs() < 1e-18);
        assert!((base - 5.0393e-4).abs() < 1e-8);
        let mut p = unit_params();
        p.antenna_gain = 2.0;
        assert!((kappa_from_physical(&p).unwrap() / base - 4.0).abs() < 1e-12);
        let mut p = unit_params();
        p.losses = 2.0;
        assert!((kappa_from_physical(&p).unwrap() / base - 0.5).abs() < 1e-12);
        let mut p = unit_params();
        p.wavelength = -1.0;
        assert!(kappa_from_physical(&p).is_err());
    }
}
