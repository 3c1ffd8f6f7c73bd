//! Counter-based Gaussian perturbation streams.
//!
//! Every stream is a ChaCha12 keystream whose key is derived from
//! `(master seed, trial, agent, tag)`. The draw for round `t` starts at a
//! fixed word offset, so any `(key, t)` can be regenerated independently of
//! how many other draws happened before it or on which thread.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Which of the per-agent perturbation sequences a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    /// `z`: objective difference probes.
    Objective,
    /// `z_hat`: constraint Jacobian estimates used for extrapolation.
    Constraint,
    /// `z_bar`: dual-weighted constraint rows in the primal step.
    Dual,
    /// Link-drop coin flips for the lossy-gossip knob.
    Link,
}

impl StreamTag {
    fn code(self) -> u64 {
        match self {
            StreamTag::Objective => 0x6f62_6a65_6374_6976,
            StreamTag::Constraint => 0x636f_6e73_7472_6169,
            StreamTag::Dual => 0x6475_616c_5f72_6f77,
            StreamTag::Link => 0x6c69_6e6b_5f64_726f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master: u64,
    pub trial: u64,
    pub agent: u64,
    pub tag: StreamTag,
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a list of words into one 64-bit value.
pub fn derive_seed(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

impl StreamKey {
    pub fn new(master: u64, trial: u64, agent: u64, tag: StreamTag) -> Self {
        Self {
            master,
            trial,
            agent,
            tag,
        }
    }

    fn chacha_seed(&self) -> [u8; 32] {
        let base = [self.master, self.trial, self.agent, self.tag.code()];
        let mut seed = [0u8; 32];
        for (lane, chunk) in seed.chunks_exact_mut(8).enumerate() {
            let mut words = base.to_vec();
            words.push(lane as u64);
            chunk.copy_from_slice(&derive_seed(&words).to_le_bytes());
        }
        seed
    }
}

/// Converts a 64-bit word to a uniform in `(0, 1]`.
#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Exact Box-Muller transform of two raw words into two standard normals.
#[inline]
pub fn box_muller(a: u64, b: u64) -> (f64, f64) {
    let radius = (-2.0 * open_unit(a).ln()).sqrt();
    let angle = std::f64::consts::TAU * ((b >> 11) as f64 * (1.0 / (1u64 << 53) as f64));
    (radius * angle.cos(), radius * angle.sin())
}

/// Fills `out` with i.i.d. standard normals drawn sequentially from `rng`.
pub fn fill_gaussian<R: RngCore + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (z0, z1) = box_muller(rng.next_u64(), rng.next_u64());
        pair[0] = z0;
        pair[1] = z1;
    }
    if let [last] = chunks.into_remainder() {
        let (z0, _) = box_muller(rng.next_u64(), rng.next_u64());
        *last = z0;
    }
}

/// Gaussian vectors of fixed dimension, addressable by round index.
#[derive(Debug, Clone)]
pub struct PerturbationStream {
    rng: ChaCha12Rng,
    dim: usize,
    words_per_draw: u128,
}

impl PerturbationStream {
    pub fn new(key: StreamKey, dim: usize) -> Self {
        // Each Box-Muller pair consumes two u64 = four 32-bit words.
        let words_per_draw = 4 * dim.div_ceil(2) as u128;
        Self {
            rng: ChaCha12Rng::from_seed(key.chacha_seed()),
            dim,
            words_per_draw,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes the round-`t` vector into `out` (length `dim`).
    pub fn draw_into(&mut self, t: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let target = t as u128 * self.words_per_draw;
        if self.rng.get_word_pos() != target {
            self.rng.set_word_pos(target);
        }
        fill_gaussian(&mut self.rng, out);
    }

    pub fn draw(&mut self, t: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.draw_into(t, &mut out);
        out
    }

    /// Uniform in `[0, 1)` for round `t`; used by scalar coin-flip streams.
    pub fn uniform(&mut self, t: u64, slot: u64) -> f64 {
        debug_assert!(slot < 1024);
        self.rng.set_word_pos((t as u128) * 2048 + 2 * slot as u128);
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// The three independent perturbation sequences owned by one agent.
#[derive(Debug, Clone)]
pub struct AgentStreams {
    pub objective: PerturbationStream,
    pub constraint: PerturbationStream,
    pub dual: PerturbationStream,
}

impl AgentStreams {
    pub fn new(master: u64, trial: u64, agent: usize, dim: usize) -> Self {
        let key = |tag| StreamKey::new(master, trial, agent as u64, tag);
        Self {
            objective: PerturbationStream::new(key(StreamTag::Objective), dim),
            constraint: PerturbationStream::new(key(StreamTag::Constraint), dim),
            dual: PerturbationStream::new(key(StreamTag::Dual), dim),
        }
    }
}
