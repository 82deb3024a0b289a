//! Counter-based derivation of independent random streams.
//!
//! Every random draw in the pipeline comes from a stream identified by
//! `(master seed, purpose tag, t, index)`. The four words are folded through
//! SplitMix64 into a 256-bit ChaCha8 key, so a stream's contents depend only
//! on its identifier and never on the order in which streams are consumed.
//! This is what lets per-particle and per-grid-cell work run in parallel and
//! still match a serial run bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator type handed to every sampling routine.
pub type StreamRng = ChaCha8Rng;

/// Purpose tags. Distinct tags never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    PriorInit = 1,
    Resample = 2,
    Move = 3,
    Propagate = 4,
    Thompson = 5,
    Population = 6,
    ReleaseNoise = 7,
    FimOuter = 8,
    BatchChain = 10,
    InitialInterval = 11,
    Replication = 12,
    Grid = 13,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A master seed from which named substreams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// The stream for `(purpose, t, index)`.
    pub fn stream(&self, purpose: Purpose, t: u64, index: u64) -> StreamRng {
        let mut state = self.master;
        let mut key = [0u8; 32];
        let words = [purpose as u64, t, index];
        let mut acc = splitmix64(&mut state);
        for w in words {
            state ^= w.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ acc;
            acc = splitmix64(&mut state);
        }
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// A child tree, used to give each replication its own master seed.
    pub fn child(&self, purpose: Purpose, index: u64) -> SeedTree {
        use rand::RngCore;
        SeedTree::new(self.stream(purpose, 0, index).next_u64())
    }
}
