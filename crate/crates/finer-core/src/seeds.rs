//! Labeled seed derivation. One master seed fans out into named
//! sub-streams so that components (data generation, training, masking,
//! evaluation) stay reproducible in isolation.

use sha2::{Digest, Sha256};

/// Derives a child seed from `master` and a textual label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// FNV-1a over arbitrary bytes; used to key content-dependent RNG
/// streams (e.g. replacement draws tied to an IC's token content).
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Named sub-seeds of one experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub data: u64,
    pub embedding: u64,
    pub model: u64,
    pub train: u64,
    pub finetune: u64,
    pub explain: u64,
    pub mask: u64,
    pub weight_mask: u64,
    pub eval_mask: u64,
}

impl SeedPlan {
    pub fn from_master(master: u64) -> Self {
        SeedPlan {
            master,
            data: derive_seed(master, "data"),
            embedding: derive_seed(master, "embedding"),
            model: derive_seed(master, "model"),
            train: derive_seed(master, "train"),
            finetune: derive_seed(master, "finetune"),
            explain: derive_seed(master, "explain"),
            mask: derive_seed(master, "mask"),
            weight_mask: derive_seed(master, "weight-mask"),
            eval_mask: derive_seed(master, "eval-mask"),
        }
    }
}
