//! Counter-based random streams keyed by `(seed, frame, pixel)`.
//!
//! Each frame owns an independent ChaCha8 stream (stream id = frame index);
//! the pixel index is the position within that stream. Any frame can be
//! regenerated in isolation, so simulation output does not depend on how
//! frames are scheduled across workers.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Domain-separation tags so different consumers of one seed never share a
/// stream.
pub const DOMAIN_PHOTONS: u64 = 0x5048_4f54_4f4e_5321;
pub const DOMAIN_READ_NOISE: u64 = 0x5245_4144_4e4f_4953;

/// Sequential uniform draws for one frame, in pixel order.
pub struct FrameRng {
    inner: ChaCha8Rng,
}

impl FrameRng {
    pub fn new(seed: u64, domain: u64, frame: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed ^ domain);
        inner.set_stream(frame);
        Self { inner }
    }

    /// Positions the stream at `pixel` (each pixel consumes one `u64`).
    pub fn at_pixel(seed: u64, domain: u64, frame: u64, pixel: u64) -> Self {
        let mut r = Self::new(seed, domain, frame);
        r.inner.set_word_pos(pixel as u128 * 2);
        r
    }

    #[inline(always)]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline(always)]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// Random-access uniform for `(seed, frame, pixel)`.
pub fn uniform_at(seed: u64, domain: u64, frame: u64, pixel: u64) -> f64 {
    FrameRng::at_pixel(seed, domain, frame, pixel).next_f64()
}
