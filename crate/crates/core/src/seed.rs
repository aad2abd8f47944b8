//! Deterministic RNG stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! splitmix64 mix of a master seed, a stream tag and an index, so a snapshot
//! or tap generated alone is bit-identical to the same item generated in a
//! batch, on any number of threads.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream tags. Distinct tags keep unrelated consumers from sharing streams.
pub mod stream {
    pub const RC_SNAPSHOT: u64 = 0x5243_5f53_4e41_5053;
    pub const SOUNDER_NOISE: u64 = 0x534f_554e_445f_4e5a;
    pub const CALIBRATION: u64 = 0x4341_4c49_4252_4154;
    pub const FADING_TAP: u64 = 0x4641_4449_4e47_5450;
    pub const EVAL_NOISE: u64 = 0x4556_414c_5f4e_5a45;
    pub const RC_MASTER: u64 = 0x5243_5f4d_4153_5452;
    pub const FADING_MASTER: u64 = 0x4644_5f4d_4153_5452;
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ splitmix64(index.wrapping_add(stream)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One draw of a zero-mean circular complex Gaussian with the given variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}
