//! Reproducible random streams with a (macro-rep, purpose, counter) hierarchy.
//!
//! Every stochastic component draws from a [`RandomStream`] keyed by the
//! experiment master seed, the macro-replication id, a purpose tag, and a
//! counter. Identical keys always replay the identical draw sequence, which is
//! what makes common random numbers across solver variants possible; distinct
//! purposes get statistically independent streams.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Identifies one stream in the seed hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub macro_rep: u64,
    purpose_hash: u64,
    pub counter: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, macro_rep: u64, purpose: &str, counter: u64) -> Self {
        Self {
            master_seed,
            macro_rep,
            purpose_hash: fnv1a(purpose.as_bytes()),
            counter,
        }
    }
}

/// FNV-1a; stable across platforms and compiler versions, unlike the std
/// hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A single-owner counter-based random stream.
#[derive(Debug, Clone)]
pub struct RandomStream {
    key: StreamKey,
    rng: ChaCha12Rng,
}

impl RandomStream {
    pub fn new(key: StreamKey) -> Self {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&key.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&key.macro_rep.to_le_bytes());
        seed[16..24].copy_from_slice(&key.purpose_hash.to_le_bytes());
        seed[24..32].copy_from_slice(&key.counter.to_le_bytes());
        Self {
            key,
            rng: ChaCha12Rng::from_seed(seed),
        }
    }

    pub fn derive(master_seed: u64, macro_rep: u64, purpose: &str) -> Self {
        Self::new(StreamKey::new(master_seed, macro_rep, purpose, 0))
    }

    /// A fresh stream under the same (master, rep, purpose) with a new counter.
    pub fn substream(&self, counter: u64) -> Self {
        Self::new(StreamKey { counter, ..self.key })
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}
