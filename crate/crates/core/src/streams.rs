//! Named, reproducible random substreams.
//!
//! Every stochastic component draws from its own generator, seeded by a
//! SHA-256 digest of the master seed and a stream name such as
//! `arrivals/3`. Streams are therefore independent of worker count and of
//! the order in which replications are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Generator for the substream `name` under `master_seed`.
pub fn substream(master_seed: u64, name: &str) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(master_seed, name))
}

/// Derive a 64-bit child seed, used to nest families of substreams.
pub fn child_seed(master_seed: u64, name: &str) -> u64 {
    let bytes = derive_seed(master_seed, name);
    u64::from_le_bytes(bytes[..8].try_into().expect("eight bytes"))
}

fn derive_seed(master_seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(b"/");
    h.update(name.as_bytes());
    h.finalize().into()
}
