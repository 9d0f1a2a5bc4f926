//! Seed plumbing shared by every stochastic component.
//!
//! All generators are ChaCha8 seeded from a `u64`; sub-streams are derived
//! with a SplitMix64 finaliser so that adding a client or a seed never
//! shifts the streams of existing ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name of the generator algorithm, recorded in resolved configs.
pub const GENERATOR: &str = "chacha8";

pub type SimRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(stream.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

/// Two-level derivation, e.g. (run seed, purpose tag, client index).
pub fn derive_seed2(master: u64, tag: u64, index: u64) -> u64 {
    derive_seed(derive_seed(master, tag), index)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fills `out` with standard normal draws via the Box–Muller transform.
pub fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (z0, z1) = box_muller(rng);
        pair[0] = z0;
        pair[1] = z1;
    }
    if let [last] = chunks.into_remainder() {
        *last = box_muller(rng).0;
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    box_muller(rng).0
}

fn box_muller<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    // u1 in (0, 1] keeps the logarithm finite
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    (radius * angle.cos(), radius * angle.sin())
}
