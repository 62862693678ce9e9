//! Simulator for sideband-pulse variational circuits on a trapped-ion chain:
//! hybrid boson–qubit states, noise channels, shot-based energy estimation,
//! tomography, topological invariants and a noise-aware pattern search.

pub mod error;
pub mod essh;
pub mod hilbert;
pub mod linalg;
pub mod mbti;
pub mod measurement;
pub mod noise;
pub mod optimizer;
pub mod sideband;
pub mod tomography;
pub mod vqe;

pub use error::{Error, Result};

/// Independent 64-bit seed for sub-stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}
