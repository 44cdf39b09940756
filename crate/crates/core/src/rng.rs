//! Named, splittable random streams.
//!
//! Every random draw in the crate comes from `stream(seed, name)`: the global
//! seed is mixed with a hash of the stream name through SplitMix64 and the
//! result seeds a ChaCha8 generator. Adding a new consumer therefore never
//! shifts the draws of an existing one.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::SplitMix64;

pub type StreamRng = ChaCha8Rng;

fn name_hash(name: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(name.as_bytes());
    h.finish()
}

/// Derives the 64-bit sub-seed for `name` under `seed`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut mix = SplitMix64::seed_from_u64(seed ^ name_hash(name));
    mix.next_u64()
}

/// Independent generator for the named stream.
pub fn stream(seed: u64, name: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}
