//! Counter-based keyed random streams.
//!
//! Every variate in the library is a pure function of a 64-bit seed, a key
//! path (domain tag, cell, strip, slab, time index, ...) and a draw counter.
//! Two streams with different key paths are statistically independent, and no
//! stream holds state beyond its own counter, so lazily materialized objects
//! can be regenerated identically on every query.

use rand_core::{impls, RngCore};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Domain tags separating the key spaces of the different consumers.
pub mod tag {
    pub const PPP_COUNT: u64 = 0x5050_5f43_4f55_4e54;
    pub const PPP_SPLIT: u64 = 0x5050_5f53_504c_4954;
    pub const PPP_LEAF: u64 = 0x5050_5f4c_4541_4600;
    pub const RACE: u64 = 0x5241_4345_0000_0001;
    pub const REPLICA: u64 = 0x5245_504c_4943_4100;
    pub const SIMULATE: u64 = 0x5349_4d55_4c41_5445;
    pub const GOVERN_W: u64 = 0x474f_565f_5700_0000;
    pub const GOVERN_V: u64 = 0x474f_565f_5600_0000;
    pub const PAST: u64 = 0x5041_5354_0000_0000;
    pub const WINDOW: u64 = 0x5749_4e44_4f57_0000;
    pub const CALIBRATE: u64 = 0x4341_4c49_4200_0000;
    pub const EVALUATE: u64 = 0x4556_414c_0000_0000;
    pub const STAGE: u64 = 0x5354_4147_4500_0000;
}

/// Stafford's variant 13 of the 64-bit finalizer (the SplitMix64 output mix).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a key path into a single 64-bit stream key.
#[inline]
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut k = mix64(seed ^ 0x243F_6A88_85A3_08D3);
    for (i, &w) in path.iter().enumerate() {
        k = mix64(k ^ mix64(w.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN))));
    }
    k
}

/// Maps a top 53-bit slice of `bits` into the open interval (0, 1).
#[inline]
pub fn open01(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// A keyed stream: draw `i` is `mix(key, i)`, nothing else is stored.
#[derive(Clone, Debug)]
pub struct Substream {
    key: u64,
    counter: u64,
}

impl Substream {
    pub fn new(seed: u64, path: &[u64]) -> Self {
        Substream {
            key: derive_seed(seed, path),
            counter: 0,
        }
    }

    /// Uniform variate in (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        open01(self.next_u64())
    }

    /// Standard exponential variate.
    #[inline]
    pub fn exp1(&mut self) -> f64 {
        -self.uniform().ln()
    }
}

impl RngCore for Substream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        let z = mix64(self.counter.wrapping_mul(GOLDEN) ^ self.key);
        mix64(z.wrapping_add(self.key))
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        impls::fill_bytes_via_next(self, dest)
    }
}

/// Stable 64-bit image of a signed time index, for use in key paths.
#[inline]
pub fn index_key(index: i64) -> u64 {
    index as u64
}
