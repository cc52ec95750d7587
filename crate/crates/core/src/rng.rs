//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit `u64` seed. Sub-streams are
//! derived by hashing `(seed, domain, index)` with SplitMix64, so replicate
//! `i` of a bootstrap or round `i` of a study draws the same numbers no
//! matter which worker runs it or in what order. The generator is ChaCha12,
//! a counter-based stream cipher.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::normal;

pub type StreamRng = ChaCha12Rng;

/// Named purposes for derived streams, keeping them disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Bootstrap = 1,
    StudyRound = 2,
    Oracle = 3,
    Acceptance = 4,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` of `domain` under `master`.
pub fn derive_seed(master: u64, domain: Domain, index: u64) -> u64 {
    let a = splitmix64(master ^ (domain as u64).wrapping_mul(0xA076_1D64_78BD_642F));
    splitmix64(a ^ splitmix64(index))
}

pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 53 random bits, shifted off both endpoints.
    ((rng.random::<u64>() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw by inversion of the distribution function.
#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    normal::ppf(open_unit(rng))
}
