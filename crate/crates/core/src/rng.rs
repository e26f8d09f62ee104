//! Reproducible random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream, keyed by a master
//! seed, a domain tag, and an index: the 32-byte key holds the master seed and
//! the domain (little-endian), and the index selects one of the 2^64 ChaCha
//! streams under that key. Trial `i` therefore sees the same numbers no matter
//! which thread runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Domain tag for Monte-Carlo trials of a mechanism.
pub const DOMAIN_TRIALS: u64 = 1;
/// Domain tag for instance generation.
pub const DOMAIN_INSTANCES: u64 = 2;
/// Domain tag for probe price vectors.
pub const DOMAIN_PROBES: u64 = 3;

pub fn substream(master_seed: u64, domain: u64, index: u64) -> SimRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// SplitMix64 finalizer; derives independent master seeds from one seed.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
