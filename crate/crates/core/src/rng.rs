//! Counter-style keyed random draws.
//!
//! Every draw is a pure function of `(master seed, stream, key)`. Nothing is
//! consumed from a shared generator, so toggling one mechanism (for example the
//! relevance error) cannot shift the values seen by another (detection,
//! channel). Each stream keeps a running digest of the draws it served so runs
//! can be compared draw-for-draw.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Independent substreams. The discriminant is part of every key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Placement = 0,
    Detection = 1,
    Channel = 2,
    Beta = 3,
    SoftRedundancy = 4,
    Slots = 5,
}

impl Stream {
    pub const ALL: [Stream; 6] = [
        Stream::Placement,
        Stream::Detection,
        Stream::Channel,
        Stream::Beta,
        Stream::SoftRedundancy,
        Stream::Slots,
    ];
}

/// Address of one draw inside a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DrawKey {
    pub epoch: u32,
    pub a: u32,
    pub b: u32,
    pub index: u32,
}

impl DrawKey {
    pub const fn new(epoch: u32, a: u32, b: u32, index: u32) -> Self {
        Self { epoch, a, b, index }
    }
}

/// Running summary of the draws served by one stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StreamDigest {
    pub draws: u64,
    pub digest: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SECOND: u64 = 0xc2b2_ae3d_27d4_eb4f;

#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug)]
pub struct RngStreams {
    seed: u64,
    bases: [u64; 6],
    digests: [Cell<StreamDigest>; 6],
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let bases = Stream::ALL.map(|s| mix(mix(seed) ^ mix((s as u64 + 1).wrapping_mul(GOLDEN))));
        Self {
            seed,
            bases,
            digests: Default::default(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    fn raw(&self, stream: Stream, key: DrawKey) -> u64 {
        let w1 = ((key.epoch as u64) << 32) | key.a as u64;
        let w2 = ((key.b as u64) << 32) | key.index as u64;
        let h = mix(self.bases[stream as usize].wrapping_add(w1.wrapping_mul(GOLDEN)));
        mix(h ^ w2.wrapping_mul(SECOND))
    }

    /// The value is already a hash of the key, so an order-sensitive fold of
    /// values is enough to tell two draw sequences apart.
    #[inline]
    fn record(&self, stream: Stream, value: u64) {
        let cell = &self.digests[stream as usize];
        let mut d = cell.get();
        d.draws += 1;
        d.digest = (d.digest ^ value).wrapping_mul(GOLDEN).rotate_left(29);
        cell.set(d);
    }

    /// Raw 64 random bits at `key`.
    #[inline]
    pub fn bits(&self, stream: Stream, key: DrawKey) -> u64 {
        let v = self.raw(stream, key);
        self.record(stream, v);
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&self, stream: Stream, key: DrawKey) -> f64 {
        (self.bits(stream, key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    #[inline]
    pub fn below(&self, stream: Stream, key: DrawKey, n: u32) -> u32 {
        debug_assert!(n > 0);
        (((self.bits(stream, key) >> 32) * n as u64) >> 32) as u32
    }

    /// Bernoulli trial. Probabilities at or beyond 0 and 1 are decided without
    /// touching the stream.
    #[inline]
    pub fn bernoulli(&self, stream: Stream, key: DrawKey, p: f64) -> bool {
        if p >= 1.0 {
            true
        } else if p <= 0.0 {
            false
        } else {
            self.uniform(stream, key) < p
        }
    }

    /// A conventional sequential generator seeded from `key`, for bulk
    /// one-off sampling such as world placement.
    pub fn sequential(&self, stream: Stream, key: DrawKey) -> ChaCha8Rng {
        let lo = self.raw(stream, key);
        let hi = self.raw(stream, DrawKey { index: key.index ^ 0x8000_0000, ..key });
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&lo.to_le_bytes());
        seed[8..16].copy_from_slice(&hi.to_le_bytes());
        seed[16..24].copy_from_slice(&mix(lo ^ hi).to_le_bytes());
        seed[24..].copy_from_slice(&mix(hi.wrapping_add(GOLDEN)).to_le_bytes());
        self.record(stream, lo);
        ChaCha8Rng::from_seed(seed)
    }

    pub fn digest(&self, stream: Stream) -> StreamDigest {
        self.digests[stream as usize].get()
    }

    pub fn reset_digests(&self) {
        for d in &self.digests {
            d.set(StreamDigest::default());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_value() {
        let a = RngStreams::new(7);
        let b = RngStreams::new(7);
        let k = DrawKey::new(3, 4, 5, 0);
        assert_eq!(a.bits(Stream::Channel, k), b.bits(Stream::Channel, k));
        assert_ne!(a.bits(Stream::Channel, k), a.bits(Stream::Detection, k));
        assert_ne!(
            a.bits(Stream::Channel, k),
            RngStreams::new(8).bits(Stream::Channel, k)
        );
    }

    #[test]
    fn draws_in_one_stream_leave_others_alone() {
        let a = RngStreams::new(1);
        let b = RngStreams::new(1);
        for i in 0..100 {
            a.uniform(Stream::Beta, DrawKey::new(i, 0, 0, 0));
        }
        let k = DrawKey::new(9, 1, 2, 0);
        assert_eq!(a.uniform(Stream::Detection, k), b.uniform(Stream::Detection, k));
        assert_eq!(a.digest(Stream::Detection), b.digest(Stream::Detection));
        assert_ne!(a.digest(Stream::Beta), b.digest(Stream::Beta));
    }

    #[test]
    fn uniform_moments() {
        let r = RngStreams::new(42);
        let n = 200_000u32;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let u = r.uniform(Stream::Detection, DrawKey::new(i / 1000, i % 1000, 3, 0));
            assert!((0.0..1.0).contains(&u));
            s += u;
            s2 += u * u;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        assert!((var - 1.0 / 12.0).abs() < 0.002, "var {var}");
    }

    #[test]
    fn below_is_roughly_uniform() {
        let r = RngStreams::new(3);
        let mut counts = [0u32; 10];
        for i in 0..100_000 {
            counts[r.below(Stream::Slots, DrawKey::new(i, 0, 0, 0), 10) as usize] += 1;
        }
        for c in counts {
            assert!((9_500..10_500).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn certain_bernoulli_does_not_draw() {
        let r = RngStreams::new(0);
        assert!(r.bernoulli(Stream::Beta, DrawKey::new(0, 0, 0, 0), 1.0));
        assert!(!r.bernoulli(Stream::Beta, DrawKey::new(0, 0, 0, 0), 0.0));
        assert_eq!(r.digest(Stream::Beta).draws, 0);
    }
}
