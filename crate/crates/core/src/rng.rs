//! Keyed ChaCha8 streams.
//!
//! ChaCha is counter based: a (key, stream, word position) triple addresses
//! any output directly, so a draw can be tied to a logical index instead of
//! to the order in which threads happen to consume the generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Recorded in run manifests so results can be tied to the generator.
pub const GENERATOR_NAME: &str = "chacha8 (rand_chacha 0.9), key = seed ‖ domain ‖ salt";

/// Independent key domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Mask = 0x6d61_736b,
    InitialState = 0x696e_6974,
    ModelParams = 0x6d6f_646c,
}

pub fn keyed(seed: u64, domain: Domain, salt: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&salt.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Uniform in [0, 1) from the top 53 bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
