//! Deterministic RNG stream derivation.
//!
//! Every client owns an independent stream keyed by `(global_seed, client,
//! round, purpose)`, so per-client work can run on any thread in any order
//! and still reproduce the sequential schedule bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream purposes; keeps training and network jitter draws independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Training = 1,
    Jitter = 2,
    Data = 3,
    Init = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(global_seed: u64, client: u64, round: u64, stream: Stream) -> u64 {
    let mut h = splitmix64(global_seed);
    h = splitmix64(h ^ client.wrapping_mul(0xA24B_AED4_963E_E407));
    h = splitmix64(h ^ round.wrapping_mul(0x9FB2_1C65_1E98_DF25));
    splitmix64(h ^ (stream as u64))
}

pub fn stream_rng(global_seed: u64, client: u64, round: u64, stream: Stream) -> SimRng {
    SimRng::seed_from_u64(derive_seed(global_seed, client, round, stream))
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
