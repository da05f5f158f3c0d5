//! Named, splittable random streams.
//!
//! Every stochastic call site takes an explicit [`RngStream`]. A stream is
//! keyed by a hash of its parent key and a name, and generates with ChaCha8,
//! a counter-based cipher, so the word position fully describes its state.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Serializable position of a stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub key: String,
    pub position: u64,
}

#[derive(Clone, Debug)]
pub struct RngStream {
    key: [u8; 32],
    rng: ChaCha8Rng,
}

impl RngStream {
    /// Root stream for a run. Different seeds never share a key.
    pub fn new(seed: u64, name: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"wmtransfer/root");
        h.update(seed.to_le_bytes());
        h.update(name.as_bytes());
        Self::from_key(h.finalize().into())
    }

    fn from_key(key: [u8; 32]) -> Self {
        RngStream {
            key,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Independent child stream. Depends only on this stream's key and
    /// `name`, not on how far this stream has advanced.
    pub fn split(&self, name: &str) -> RngStream {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        Self::from_key(h.finalize().into())
    }

    /// Words consumed so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn key_hex(&self) -> String {
        hex::encode(self.key)
    }

    pub fn snapshot(&self) -> RngSnapshot {
        RngSnapshot {
            key: self.key_hex(),
            position: self.position() as u64,
        }
    }

    /// Stream at the state recorded by [`RngStream::snapshot`].
    pub fn restore(snapshot: &RngSnapshot) -> Result<Self> {
        let bytes = hex::decode(&snapshot.key)
            .ok()
            .and_then(|b| <[u8; 32]>::try_from(b).ok())
            .ok_or_else(|| Error::Input(format!("bad stream key {:?}", snapshot.key)))?;
        let mut s = Self::from_key(bytes);
        s.rng.set_word_pos(snapshot.position as u128);
        Ok(s)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngStream {
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
