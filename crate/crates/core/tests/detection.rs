use esa_ipa::detection::*;
use esa_ipa::rng::{NoiseStream, Purpose, StreamKey};
use rayon::prelude::*;

const SNRS: [f64; 5] = [0.0, 1.0, 3.0, 9.0, 30.0];
const PFAS: [f64; 3] = [1e-2, 1e-4, 1e-6];
const TRIALS: u64 = 1_000_000;

fn stream(i: usize) -> NoiseStream {
    NoiseStream::new(0xDE7, StreamKey::new(Purpose::Auxiliary, 0, i))
}

/// (snr, pfa, estimate, closed form, binomial stderr at the closed form) for every grid point.
pub fn oracle_grid() -> Vec<(f64, f64, f64, f64, f64)> {
    let points: Vec<(f64, f64)> = SNRS.iter().flat_map(|&s| PFAS.iter().map(move |&p| (s, p))).collect();
    points
        .par_iter()
        .enumerate()
        .map(|(i, &(snr, pfa))| {
            let est = mc_pd_estimate(snr, pfa, TRIALS, Hypothesis::H1, &mut stream(i)).unwrap();
            let pd = swerling1_pd(snr, pfa).unwrap();
            let se = (pd * (1.0 - pd) / TRIALS as f64).sqrt();
            (snr, pfa, est.estimate, pd, se)
        })
        .collect()
}

#[test]
fn monte_carlo_agrees_with_closed_form_on_grid() {
    for (snr, pfa, est, pd, se) in oracle_grid() {
        assert!((est - pd).abs() < 3.0 * se, "snr {snr}, pfa {pfa}: {est} vs {pd} (se {se})");
    }
}

#[test]
fn noise_only_mode_estimates_false_alarm_rate() {
    let est = mc_pd_estimate(9.0, 1e-2, TRIALS, Hypothesis::H0, &mut stream(100)).unwrap();
    let se = (1e-2 * (1.0 - 1e-2) / TRIALS as f64).sqrt();
    assert!((est.estimate - 1e-2).abs() < 3.0 * se, "{}", est.estimate);
}

#[test]
fn zero_snr_detects_at_false_alarm_rate() {
    for pfa in PFAS {
        assert!((swerling1_pd(0.0, pfa).unwrap() - pfa).abs() < 1e-15 * pfa.max(1e-300) + 1e-18);
    }
}

#[test]
fn pd_increases_with_snr() {
    for pfa in PFAS {
        let mut last = 0.0;
        for k in 0..200 {
            let pd = swerling1_pd(k as f64 * 0.25, pfa).unwrap();
            assert!(pd > last);
            last = pd;
        }
    }
}

#[test]
fn threshold_is_inverse_of_false_alarm() {
    for pfa in [0.5, 1e-2, 1e-4, 1e-6, 1e-12] {
        let gamma = threshold_from_pfa(pfa).unwrap();
        assert!(((-gamma).exp() - pfa).abs() < 1e-12 * pfa);
        // P_d at the same threshold is exp(-γ/(1+ρ))
        let pd = swerling1_pd(3.0, pfa).unwrap();
        assert!((pd - (-gamma / 4.0).exp()).abs() < 1e-12);
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(threshold_from_pfa(0.0).is_err());
    assert!(threshold_from_pfa(1.0).is_err());
    assert!(swerling1_pd(-1.0, 1e-3).is_err());
    assert!(mc_pd_estimate(1.0, 1e-3, 100, Hypothesis::H1, &mut stream(0)).is_err());
}
