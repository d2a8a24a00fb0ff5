//! Seeded, replayable randomness.
//!
//! Every random draw in the crate goes through a [`RandomSource`]. Sources are
//! single-owner; independent streams are derived by hashing a master seed
//! together with a list of labels (session id, attribute name, user id, ...),
//! so that adding or removing one consumer never shifts the draws of another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// A label mixed into a derived stream.
#[derive(Debug, Clone, Copy)]
pub enum StreamLabel<'a> {
    Num(u64),
    Name(&'a str),
}

impl From<u64> for StreamLabel<'_> {
    fn from(v: u64) -> Self {
        StreamLabel::Num(v)
    }
}

impl<'a> From<&'a str> for StreamLabel<'a> {
    fn from(v: &'a str) -> Self {
        StreamLabel::Name(v)
    }
}

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Derive an independent stream from `master` and an ordered list of labels.
    pub fn derive(master: u64, labels: &[StreamLabel<'_>]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"vr-incognito/stream/v1");
        hasher.update(master.to_le_bytes());
        for label in labels {
            match label {
                StreamLabel::Num(n) => {
                    hasher.update([0u8]);
                    hasher.update(n.to_le_bytes());
                }
                StreamLabel::Name(s) => {
                    hasher.update([1u8]);
                    hasher.update((s.len() as u64).to_le_bytes());
                    hasher.update(s.as_bytes());
                }
            }
        }
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest[..32]);
        let seed = u64::from_le_bytes(key[..8].try_into().expect("8 bytes"));
        Self {
            seed,
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw from the open interval (0, 1).
    ///
    /// Uses 52 random bits placed at the centre of their bucket, so neither
    /// endpoint is reachable (`bits + 0.5` stays exact below 2^52).
    pub fn uniform_open(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 12;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_open()
    }

    /// Standard normal via Box-Muller (one value per call).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform index in `0..n`. `n` must be non-zero.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        ((self.uniform_open() * n as f64) as usize).min(n - 1)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
