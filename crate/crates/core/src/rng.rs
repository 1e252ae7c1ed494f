//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from the run seed, so
//! adding draws in one component never perturbs another. ChaCha output is specified
//! independently of platform and word size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The independent random streams used by one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Sampling = 1,
    PublicPresample = 2,
    PublicSampling = 3,
    Placement = 4,
    Interference = 5,
    Failures = 6,
    TopologySelection = 7,
}

pub type SimRng = ChaCha8Rng;

/// Creates the generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
