//! SHA-256 content hashes, hex encoded.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub type Hash = [u8; 32];

pub fn sha256(bytes: &[u8]) -> Hash {
    Sha256::digest(bytes).into()
}

pub fn to_hex(h: &Hash) -> String {
    hex::encode(h)
}

pub fn from_hex(s: &str) -> Option<Hash> {
    hex::decode(s).ok()?.try_into().ok()
}

/// Hash of the canonical JSON rendering of `value`, tagged with `domain` so
/// equal payloads of different kinds never collide.
pub fn hash_json<T: Serialize>(domain: &str, value: &T) -> String {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(value).expect("serializable"));
    hex::encode(h.finalize())
}

/// Incremental hash over several labeled parts.
#[derive(Default)]
pub struct Chain(Sha256);

impl Chain {
    pub fn new(domain: &str) -> Self {
        let mut h = Sha256::new();
        h.update(domain.as_bytes());
        h.update([0u8]);
        Self(h)
    }

    pub fn part(mut self, bytes: &[u8]) -> Self {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn json<T: Serialize>(self, value: &T) -> Self {
        self.part(&serde_json::to_vec(value).expect("serializable"))
    }

    pub fn hex(self) -> String {
        hex::encode(self.0.finalize())
    }
}
