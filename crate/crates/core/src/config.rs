//! Scenario configuration files.
//!
//! Scenarios are TOML documents. Every section has defaults (the two-target
//! scenario returned by [`ScenarioConfig::default`]), unknown keys are
//! rejected, and any field can be overridden after parsing with a
//! `dotted.path=value` string; array elements are addressed by index, e.g.
//! `targets.1.process_noise=2.5` or `training.alpha0.2=-1`.

use crate::detection::{kappa_from_physical, PhysicalRadarParams};
use crate::error::{Error, Result};
use crate::filter::ResamplingMode;
use crate::ipa::{ParamBox, StepSchedule};
use crate::pomdp::EpisodeSettings;
use crate::radar::{DwellLimits, RadarConstants, TargetState, POLICY_DIM};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Gives ρ = 9 (P_d ≈ 0.4 at P_fa = 1e-4) for a boresight target at 50 km
/// with a 0.1 s dwell.
pub const DEFAULT_KAPPA: f64 = 5.625e20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Scenario duration T, seconds.
    pub horizon: f64,
    /// Fine simulation step, seconds.
    pub fine_step: f64,
    pub radar: RadarConfig,
    pub targets: Vec<TargetConfig>,
    pub filter: FilterConfig,
    pub reward: RewardConfig,
    pub training: TrainingConfig,
    pub gradcheck: GradcheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarConfig {
    /// Sensor coefficient κ (m⁴/s). At most one of `kappa` and `physical`
    /// may be set; with neither, [`DEFAULT_KAPPA`] is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalRadarParams>,
    /// Beamwidth B, radians.
    pub beamwidth: f64,
    pub pfa: f64,
    /// Range noise std, metres.
    pub sigma_r: f64,
    /// Azimuth noise std, radians.
    pub sigma_beta: f64,
    /// Range-rate noise std, metres/second.
    pub sigma_rdot: f64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub delta_min: f64,
    pub delta_max: f64,
    /// Time between the end of a dwell and the next look, seconds.
    pub overhead: f64,
    /// Added to the position-covariance trace the scheduling policy sees, m².
    pub uncertainty_floor: f64,
    /// Generate detections without measurement noise (the filter still uses
    /// the configured noise levels).
    pub noiseless_measurements: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// Mean initial state (rx, ry, vx, vy).
    pub initial_state: [f64; 4],
    pub initial_std_position: f64,
    pub initial_std_velocity: f64,
    /// NCV process noise intensity σ.
    pub process_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Particles per target.
    pub particles: usize,
    /// "always" or "ess".
    pub resampling: String,
    /// Threshold fraction of N used when `resampling = "ess"`.
    pub ess_fraction: f64,
    /// Process noise assumed by the filter; defaults to each target's own.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process_noise: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Position errors are measured in units of this many metres.
    pub length_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub eta0: f64,
    pub k0: f64,
    /// Episodes averaged per gradient step.
    pub batch: usize,
    pub iterations: usize,
    pub alpha0: Vec<f64>,
    pub alpha_min: Vec<f64>,
    pub alpha_max: Vec<f64>,
    /// Differentiate the policy through the filter statistics it reads
    /// (see `ScanPolicy::differentiate_statistics`).
    pub differentiate_statistics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub ipa_episodes: usize,
    pub fd_seeds: usize,
    /// Relative finite-difference step. Steps much below 0.1 leave the
    /// common-random-number difference dominated by detection flips.
    pub epsilon: f64,
    pub cosine_threshold: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            horizon: 20.0,
            fine_step: 0.05,
            radar: RadarConfig::default(),
            targets: vec![
                // near and slow
                TargetConfig {
                    initial_state: [20_000.0, -5_000.0, -20.0, 30.0],
                    initial_std_position: 100.0,
                    initial_std_velocity: 5.0,
                    process_noise: 1.0,
                },
                // far and fast
                TargetConfig {
                    initial_state: [60_000.0, 15_000.0, -250.0, -100.0],
                    initial_std_position: 200.0,
                    initial_std_velocity: 10.0,
                    process_noise: 5.0,
                },
            ],
            filter: FilterConfig::default(),
            reward: RewardConfig::default(),
            training: TrainingConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self {
            kappa: None,
            physical: None,
            beamwidth: 2f64.to_radians(),
            pfa: 1e-4,
            sigma_r: 10.0,
            sigma_beta: 0.3f64.to_radians(),
            sigma_rdot: 1.0,
            position: [0.0, 0.0],
            velocity: [0.0, 0.0],
            delta_min: 0.01,
            delta_max: 0.5,
            overhead: 0.02,
            uncertainty_floor: 1.0,
            noiseless_measurements: false,
        }
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles: 1000,
            resampling: "always".into(),
            ess_fraction: 0.5,
            process_noise: None,
        }
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { length_scale: 1000.0 }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta0: 0.05,
            k0: 50.0,
            batch: 10,
            iterations: 200,
            alpha0: vec![1.0, 0.0, 0.0, 0.0],
            alpha_min: vec![-10.0, -10.0, -10.0, -2.0],
            alpha_max: vec![10.0, 10.0, 10.0, 2.0],
            differentiate_statistics: false,
        }
    }
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            ipa_episodes: 200,
            fd_seeds: 30,
            epsilon: 0.1,
            cosine_threshold: 0.7,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides, then validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let parsed: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if overrides.is_empty() {
            parsed.validate()?;
            return Ok(parsed);
        }
        // overrides address the fully populated document, so defaults can be indexed into
        let mut doc = toml::Table::try_from(&parsed).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ScenarioConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.episode_settings().fine_steps()?;
        self.radar_constants()?.validate()?;
        self.dwell_limits().validate()?;
        if self.targets.is_empty() {
            return Err(Error::Config("at least one target is required".into()));
        }
        for (p, t) in self.targets.iter().enumerate() {
            if !t.initial_state.iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("targets.{p}.initial_state must be finite")));
            }
            if t.initial_state[0] <= self.radar.position[0] {
                return Err(Error::Config(format!(
                    "targets.{p} must start in front of the array (rx > radar x)"
                )));
            }
            for (name, v) in [
                ("initial_std_position", t.initial_std_position),
                ("initial_std_velocity", t.initial_std_velocity),
                ("process_noise", t.process_noise),
            ] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("targets.{p}.{name} must be >= 0, got {v}")));
                }
            }
        }
        self.resampling_mode()?;
        if !(self.radar.uncertainty_floor > 0.0 && self.radar.uncertainty_floor.is_finite()) {
            return Err(Error::Config(format!(
                "radar.uncertainty_floor must be > 0, got {}",
                self.radar.uncertainty_floor
            )));
        }
        if let Some(q) = self.filter.process_noise {
            if !(q >= 0.0 && q.is_finite()) {
                return Err(Error::Config(format!("filter.process_noise must be >= 0, got {q}")));
            }
        }
        if !(self.reward.length_scale > 0.0 && self.reward.length_scale.is_finite()) {
            return Err(Error::Config("reward.length_scale must be positive".into()));
        }
        let tr = &self.training;
        if tr.batch == 0 {
            return Err(Error::Config("training.batch must be >= 1".into()));
        }
        self.step_schedule()?;
        for (name, v) in [("alpha0", &tr.alpha0), ("alpha_min", &tr.alpha_min), ("alpha_max", &tr.alpha_max)] {
            if v.len() != POLICY_DIM {
                return Err(Error::Config(format!(
                    "training.{name} must have {POLICY_DIM} components, got {}",
                    v.len()
                )));
            }
        }
        self.param_box()?;
        let gc = &self.gradcheck;
        if !(gc.epsilon > 0.0) {
            return Err(Error::Config(format!("gradcheck.epsilon must be > 0, got {}", gc.epsilon)));
        }
        if gc.ipa_episodes == 0 || gc.fd_seeds == 0 {
            return Err(Error::Config("gradcheck episode counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn kappa(&self) -> Result<f64> {
        match (&self.radar.kappa, &self.radar.physical) {
            (Some(k), None) => Ok(*k),
            (None, Some(p)) => kappa_from_physical(p),
            (Some(_), Some(_)) => Err(Error::Config("set only one of radar.kappa and radar.physical".into())),
            (None, None) => Ok(DEFAULT_KAPPA),
        }
    }

    pub fn radar_constants(&self) -> Result<RadarConstants> {
        let r = &self.radar;
        Ok(RadarConstants {
            kappa: self.kappa()?,
            beamwidth: r.beamwidth,
            pfa: r.pfa,
            sigma_r: r.sigma_r,
            sigma_beta: r.sigma_beta,
            sigma_rdot: r.sigma_rdot,
            position: r.position,
            velocity: r.velocity,
        })
    }

    pub fn dwell_limits(&self) -> DwellLimits {
        DwellLimits {
            delta_min: self.radar.delta_min,
            delta_max: self.radar.delta_max,
            overhead: self.radar.overhead,
        }
    }

    pub fn resampling_mode(&self) -> Result<ResamplingMode> {
        match self.filter.resampling.as_str() {
            "always" => Ok(ResamplingMode::Always),
            "ess" => {
                let fraction = self.filter.ess_fraction;
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::Config(format!("filter.ess_fraction must lie in [0, 1], got {fraction}")));
                }
                Ok(ResamplingMode::EssThreshold { fraction })
            }
            other => Err(Error::Config(format!(
                "filter.resampling must be \"always\" or \"ess\", got {other:?}"
            ))),
        }
    }

    pub fn episode_settings(&self) -> EpisodeSettings {
        EpisodeSettings {
            horizon: self.horizon,
            fine_step: self.fine_step,
            particles: self.filter.particles,
            resampling: self.resampling_mode().unwrap_or_default(),
        }
    }

    pub fn step_schedule(&self) -> Result<StepSchedule> {
        let tr = &self.training;
        if !(tr.eta0 >= 0.0 && tr.eta0.is_finite() && tr.k0 > 0.0) {
            return Err(Error::Config(format!(
                "training needs eta0 >= 0 and k0 > 0, got eta0 = {}, k0 = {}",
                tr.eta0, tr.k0
            )));
        }
        Ok(StepSchedule::Decaying { eta0: tr.eta0, k0: tr.k0 })
    }

    pub fn param_box(&self) -> Result<ParamBox> {
        let tr = &self.training;
        let b = ParamBox::new(tr.alpha_min.clone(), tr.alpha_max.clone())?;
        if !b.contains(&tr.alpha0) {
            return Err(Error::Config("training.alpha0 lies outside [alpha_min, alpha_max]".into()));
        }
        Ok(b)
    }

    pub fn initial_states(&self) -> Vec<TargetState> {
        self.targets.iter().map(|t| TargetState::from_array(t.initial_state)).collect()
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies one `dotted.path=value` override to a parsed document. Missing
/// tables along the path are created; unknown leaf names are caught later
/// by deserialisation.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key {path:?} is malformed")));
    }
    let value = parse_value(raw.trim());
    let bad = |why: &str| Error::Config(format!("override {path:?}: {why}"));

    let mut node: &mut toml::Value = doc
        .entry(keys[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if keys.len() == 1 {
        *node = value;
        return Ok(());
    }
    for (depth, key) in keys.iter().enumerate().skip(1) {
        let last = depth == keys.len() - 1;
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(key.to_string(), value);
                    return Ok(());
                }
                t.entry(key.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let i: usize = key.parse().map_err(|_| bad("array index expected"))?;
                let len = a.len();
                let slot = a.get_mut(i).ok_or_else(|| bad(&format!("index {i} out of range (len {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad("path descends into a scalar")),
        };
    }
    unreachable!("loop returns on the last key")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ScenarioConfig::from_toml_str("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ScenarioConfig::from_toml_str("sed = 3").is_err());
        assert!(ScenarioConfig::from_toml_str("[radar]\nkapa = 1.0").is_err());
    }

    #[test]
    fn overrides_apply() {
        let cfg = ScenarioConfig::from_toml_with_overrides(
            "",
            &[
                "seed=99".into(),
                "targets.1.process_noise=2.5".into(),
                "training.alpha0.2=-1".into(),
                "filter.resampling=ess".into(),
                "radar.noiseless_measurements=true".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.targets[1].process_noise, 2.5);
        assert_eq!(cfg.training.alpha0[2], -1.0);
        assert_eq!(cfg.resampling_mode().unwrap(), ResamplingMode::EssThreshold { fraction: 0.5 });
        assert!(cfg.radar.noiseless_measurements);
    }

    #[test]
    fn bad_overrides() {
        assert!(ScenarioConfig::from_toml_with_overrides("", &["seed".into()]).is_err());
        assert!(ScenarioConfig::from_toml_with_overrides("", &["targets.5.process_noise=1".into()]).is_err());
        assert!(ScenarioConfig::from_toml_with_overrides("", &["training.nope=1".into()]).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        for o in [
            "fine_step=0.3",
            "radar.pfa=1.5",
            "radar.delta_min=0.6",
            "training.alpha0=[1.0, 2.0]",
            "filter.particles=0",
            "targets.0.initial_state=[-5.0, 0.0, 0.0, 0.0]",
        ] {
            assert!(ScenarioConfig::from_toml_with_overrides("", &[o.into()]).is_err(), "{o}");
        }
    }

    #[test]
    fn physical_block_replaces_kappa() {
        let text = r#"
            [radar.physical]
            transmit_power = 1.0
            antenna_gain = 1.0
            wavelength = 1.0
            cross_section = 1.0
            boltzmann = 1.0
            system_temperature = 1.0
            losses = 1.0
        "#;
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        let expected = 1.0 / (4.0 * std::f64::consts::PI).powi(3);
        assert!((cfg.kappa().unwrap() - expected).abs() < 1e-18);
        assert_eq!(ScenarioConfig::default().kappa().unwrap(), DEFAULT_KAPPA);
        assert!(ScenarioConfig::from_toml_with_overrides(text, &["radar.kappa=1.0".into()]).is_err());
    }
}
