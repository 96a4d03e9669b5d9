//! Seed derivation and named per-episode random streams.
//!
//! Every episode owns one logical seed. The seed is split into independent
//! named sub-streams (transition, observation, arrival, init, policy) so that
//! adding draws to one kernel never perturbs the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The concrete RNG used everywhere. ChaCha gives identical output on every
/// platform, which the replay-determinism contract relies on.
pub type Stream = ChaCha8Rng;

/// splitmix64 finalizer; stable, well-mixed, dependency-free.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, fixed offset basis; stable across builds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed from `(seed, domain, index)`. Used to give each
/// training or evaluation episode its own independent seed.
pub fn derive_seed(seed: u64, domain: &str, index: u64) -> u64 {
    mix64(seed ^ label_hash(domain).rotate_left(17) ^ mix64(index))
}

/// Builds the sub-stream named `label` for an episode seed.
pub fn named_stream(seed: u64, label: &str) -> Stream {
    Stream::seed_from_u64(mix64(seed ^ label_hash(label)))
}

/// The named sub-streams available to one episode.
///
/// `transition` drives state evolution, `observation` drives event emission,
/// `arrival` drives exogenous processes (alarms, emails), `init` drives
/// initial-state sampling, and `policy` drives agent-side randomness such as
/// epsilon-greedy exploration.
#[derive(Debug)]
pub struct EpisodeStreams {
    pub transition: Stream,
    pub observation: Stream,
    pub arrival: Stream,
    pub init: Stream,
    pub policy: Stream,
}

impl EpisodeStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            transition: named_stream(seed, "transition"),
            observation: named_stream(seed, "observation"),
            arrival: named_stream(seed, "arrival"),
            init: named_stream(seed, "init"),
            policy: named_stream(seed, "policy"),
        }
    }
}
