//! Sensor management as a partially observed control problem.
//!
//! * [`pomdp`] defines the model traits and the episode loop.
//! * [`filter`] is a bootstrap particle filter whose particles carry score
//!   accumulators.
//! * [`ipa`] estimates policy gradients along simulated episodes and trains
//!   policies by stochastic gradient ascent.
//! * [`radar`] and [`scenario`] implement an electronically scanned radar
//!   tracking several targets, with [`detection`] providing the Swerling-I
//!   detection model.
//! * [`tiny_hmm`] is an exact enumeration oracle for the gradient estimator.

pub mod config;
pub mod detection;
pub mod error;
pub mod filter;
pub mod ipa;
pub mod pomdp;
pub mod radar;
pub mod rng;
pub mod scenario;
pub mod tiny_hmm;

pub use config::ScenarioConfig;
pub use error::{Error, Result};
pub use filter::{FilterStatistics, ParticleCloud, ResamplingMode};
pub use ipa::{GradientEstimate, ParamBox, PolicyParams, StepSchedule};
pub use pomdp::{run_episode, simulate_episode, EpisodeRecord, EpisodeSettings, Environment};
pub use scenario::RadarEnv;
