//! Deterministic random streams.
//!
//! Each stream is a ChaCha8 keystream keyed by the master seed (mixed with a
//! domain tag) and positioned on its own 64-bit stream number. ChaCha is
//! counter based, so the numbers drawn by path `i` depend only on
//! `(seed, domain, i)` and never on scheduling or thread count.

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::ComplexVec;

/// Domain tags keep unrelated experiments that share a seed from sharing numbers.
pub mod domain {
    pub const PATHS: u64 = 0x5041_5448;
    pub const TUBE_SAMPLES: u64 = 0x5455_4245;
    pub const BASELINE_SAMPLES: u64 = 0x4241_5345;
    pub const STARTS: u64 = 0x5354_5254;
    pub const TILT: u64 = 0x5449_4c54;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub seed: u64,
    pub domain: u64,
    pub index: u64,
}

impl StreamId {
    pub fn new(seed: u64, domain: u64, index: u64) -> Self {
        Self { seed, domain, index }
    }

    pub fn path(seed: u64, index: u64) -> Self {
        Self::new(seed, domain::PATHS, index)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A reproducible random stream.
#[derive(Debug, Clone)]
pub struct Stream {
    id: StreamId,
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(id: StreamId) -> Self {
        let key = splitmix64(id.seed ^ splitmix64(id.domain));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(id.index);
        Self { id, rng }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `g1 + i g2` with `g1, g2` independent `N(0, var)`.
    pub fn complex_normal(&mut self, var: f64) -> Complex64 {
        let s = var.sqrt();
        let re = self.normal();
        let im = self.normal();
        Complex64::new(s * re, s * im)
    }

    /// A sample of the standard Gaussian measure on `C^n` (unit-variance real coordinates).
    pub fn standard_gaussian(&mut self, n: usize) -> ComplexVec {
        ComplexVec::from_fn(n, |_, _| self.complex_normal(1.0))
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = {
            let mut s = Stream::new(StreamId::path(42, 3));
            (0..8).map(|_| s.normal()).collect()
        };
        let b: Vec<f64> = {
            let mut s = Stream::new(StreamId::path(42, 3));
            (0..8).map(|_| s.normal()).collect()
        };
        let c: Vec<f64> = {
            let mut s = Stream::new(StreamId::path(42, 4));
            (0..8).map(|_| s.normal()).collect()
        };
        let d: Vec<f64> = {
            let mut s = Stream::new(StreamId::new(42, domain::TUBE_SAMPLES, 3));
            (0..8).map(|_| s.normal()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut s = Stream::new(StreamId::path(1, 0));
        for _ in 0..1000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
