//! Derivation of independent, reproducible RNG streams.
//!
//! Every source of randomness in the engine draws from its own ChaCha8
//! stream keyed by `(master seed, purpose tag, round, client)`. The key is
//! folded into a 64-bit seed with FNV-1a over the string components and the
//! SplitMix64 finalizer between components, so the same tuple always yields
//! the same stream and distinct purposes never share one. Streams are
//! derived up front and never handed between tasks, which is what makes
//! client work order-independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit stream seed from the master seed, a purpose tag, a round
/// index, and an optional client id.
pub fn derive(master: u64, purpose: &str, round: u64, client: Option<&str>) -> u64 {
    let mut h = mix(master ^ fnv1a(purpose.as_bytes()));
    h = mix(h ^ round);
    if let Some(id) = client {
        h = mix(h ^ fnv1a(id.as_bytes()));
    }
    h
}

/// ChaCha8 stream for the given `(master, purpose, round, client)` tuple.
pub fn stream(master: u64, purpose: &str, round: u64, client: Option<&str>) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, purpose, round, client))
}
