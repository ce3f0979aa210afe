//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, stream, slot)`, so a realization does not
//! depend on how work is split across threads.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

pub(crate) struct NormalStream {
    rng: ChaCha20Rng,
}

impl NormalStream {
    pub(crate) fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Two independent standard normals attached to `slot`.
    pub(crate) fn pair(&mut self, slot: u64) -> (f64, f64) {
        self.rng.set_word_pos(slot as u128 * 4);
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        box_muller(a, b)
    }
}

fn box_muller(a: u64, b: u64) -> (f64, f64) {
    let scale = 1.0 / (1u64 << 53) as f64;
    let u1 = ((a >> 11) + 1) as f64 * scale;
    let u2 = (b >> 11) as f64 * scale;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    (r * c, r * s)
}

/// General-purpose generator for a given seed and stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
