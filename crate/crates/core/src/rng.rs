//! Seeding tree.
//!
//! Every random stream in the crate is a `ChaCha8Rng` whose seed is derived
//! from a master seed and a purpose label, so that adding a new consumer never
//! shifts the draws of an existing one:
//!
//! ```text
//! master_seed ─┬─ "covariates/in"   ─► ChaCha8
//!              ├─ "catalog"/i       ─► ChaCha8 (one per treatment graph)
//!              ├─ "propensity"      ─► ChaCha8
//!              └─ "train/sin"       ─► ChaCha8 ...
//! ```
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed from `master` for the given purpose and index.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(purpose)).wrapping_add(splitmix64(index)))
}

/// Builds the RNG stream for `(master, purpose, index)`.
pub fn stream(master: u64, purpose: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, purpose, index))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
