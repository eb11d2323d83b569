//! Deterministic noise streams.
//!
//! Every random quantity in a simulation is a function of uniform(0,1)
//! variates drawn from a keyed stream. A stream is identified by an episode
//! seed plus a [`StreamKey`] (purpose, target, index); the key selects an
//! independent ChaCha8 stream, so the draws used for, say, the true target
//! motion at fine step 17 do not depend on how many draws any other part of
//! the episode consumed. This is what makes common-random-number comparisons
//! between two policies line up.
//!
//! Gaussian variates are produced with the Box-Muller transform from pairs of
//! uniforms: `(u1, u2) -> sqrt(-2 ln u1) * (cos 2πu2, sin 2πu2)`. Models that
//! need `k` normals consume `2 * ceil(k / 2)` uniforms.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use std::f64::consts::PI;

/// What a stream is used for. Part of the stream identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    TruthInit = 1,
    Truth = 2,
    ParticleInit = 3,
    Predict = 4,
    Observe = 5,
    Resample = 6,
    /// Free-standing streams for tests and Monte Carlo oracles.
    Auxiliary = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub purpose: Purpose,
    pub target: u64,
    pub index: u64,
}

impl StreamKey {
    pub fn new(purpose: Purpose, target: usize, index: usize) -> Self {
        Self {
            purpose,
            target: target as u64,
            index: index as u64,
        }
    }

    fn stream_id(&self) -> u64 {
        let mut h = splitmix64(self.purpose as u64);
        h = splitmix64(h ^ self.target);
        splitmix64(h ^ self.index.rotate_left(17))
    }
}

/// SplitMix64 finalizer, used to turn structured keys into stream ids.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of indices.
pub fn derive_seed(parent: u64, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(splitmix64(parent), |acc, &i| splitmix64(acc ^ splitmix64(i)))
}

/// A fixed-length tuple of uniform(0,1) variates.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw(pub Vec<f64>);

impl std::ops::Deref for NoiseDraw {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(episode_seed: u64, key: StreamKey) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        rng.set_stream(key.stream_id());
        Self { rng }
    }

    /// Positions the stream at the start of draw number `draw_index`, where
    /// each draw is `draw_len` uniforms. Used to give particle `i` its own
    /// window of a shared per-step stream.
    pub fn seek_draw(&mut self, draw_index: usize, draw_len: usize) {
        // each uniform consumes one u64, i.e. two 32-bit ChaCha words
        self.rng
            .set_word_pos((draw_index as u128) * (draw_len as u128) * 2);
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn fill_uniform(&mut self, out: &mut [f64]) {
        for u in out.iter_mut() {
            *u = self.uniform();
        }
    }

    pub fn standard_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform();
        let u2 = self.uniform();
        box_muller(u1, u2)
    }
}

/// Draws one noise tuple of `dim` uniforms from `stream`.
pub fn draw_noise(stream: &mut NoiseStream, dim: usize) -> NoiseDraw {
    let mut v = vec![0.0; dim];
    stream.fill_uniform(&mut v);
    NoiseDraw(v)
}

#[inline]
pub fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let radius = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    (radius * c, radius * s)
}

/// Converts `2 * ceil(out.len() / 2)` uniforms into `out.len()` standard normals.
pub fn normals_from_uniforms(uniforms: &[f64], out: &mut [f64]) {
    debug_assert!(uniforms.len() >= 2 * out.len().div_ceil(2));
    for (pair, chunk) in out.chunks_mut(2).enumerate() {
        let (z0, z1) = box_muller(uniforms[2 * pair], uniforms[2 * pair + 1]);
        chunk[0] = z0;
        if chunk.len() > 1 {
            chunk[1] = z1;
        }
    }
}
