//! Splittable seeding.
//!
//! Every random stream in the crate is derived from a user seed, a domain tag
//! and an index, so that results do not depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Domain tags keep streams for different purposes disjoint under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    InitialCondition = 1,
    Brownian = 2,
    Init = 3,
    Batches = 4,
    Prediction = 5,
    Misc = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sub_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ domain as u64) ^ index)
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, domain, index))
}
