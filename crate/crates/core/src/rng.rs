//! Seed derivation and per-purpose random streams.
//!
//! Every consumer of randomness in a run draws from its own stream derived
//! from the run seed, so changing how one subsystem consumes numbers (for
//! example, a campaign sending zero SMSs) never shifts another subsystem.
//!
//! Individuals go further: their draws come from a short generator keyed by
//! (individual, round, lane). Two runs that differ only in who received an
//! SMS therefore see the same onset, symptom and recovery draws for everyone
//! whose state did not change.

use rand::{RngCore, SeedableRng};
use rand_pcg::Pcg64Mcg;

pub type Stream = Pcg64Mcg;

/// Stream purposes. Each purpose gets an independent stream per seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 0x11,
    Permutation = 0x22,
    Dispatch = 0x33,
    Births = 0x44,
    Individual = 0x55,
    Replicate = 0x66,
    Candidate = 0x77,
    Sampler = 0x88,
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a salt and an index into a fresh 64-bit seed.
#[inline]
pub fn derive_seed(base: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ (purpose as u64).rotate_left(40)) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

#[inline]
pub fn stream_from_seed(seed: u64) -> Stream {
    let hi = splitmix64(seed);
    let lo = splitmix64(hi ^ seed);
    Pcg64Mcg::new(((hi as u128) << 64) | lo as u128)
}

#[inline]
pub fn stream(base: u64, purpose: Purpose, index: u64) -> Stream {
    stream_from_seed(derive_seed(base, purpose, index))
}

/// Seeds for `n` replicates of a run rooted at `base`.
pub fn replicate_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64)
        .map(|k| derive_seed(base, Purpose::Replicate, k))
        .collect()
}

/// SplitMix64 generator, used for the short per-individual, per-round
/// streams.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

impl RngCore for SplitMix64 {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let z = splitmix64(self.state);
        self.state = self.state.wrapping_add(GOLDEN);
        z
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Independent draw lanes of one individual within a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Lane {
    Clinical = 1,
    Compliance = 2,
}

/// Key of an individual's draws, fixed for the whole run.
#[inline]
pub fn individual_key(base: u64, id: u32) -> u64 {
    derive_seed(base, Purpose::Individual, id as u64)
}

/// Generator for one individual's draws in one round on one lane.
#[inline]
pub fn round_stream(key: u64, round: u32, lane: Lane) -> SplitMix64 {
    let counter = ((round as u64) << 2) | lane as u64;
    SplitMix64 {
        state: key ^ counter.wrapping_mul(0xD6E8_FEB8_6659_FD93),
    }
}

/// Convenience for callers that want a generic seeded rng.
pub fn seeded(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}
