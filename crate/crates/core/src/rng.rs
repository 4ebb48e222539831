//! Deterministic random number streams.
//!
//! All randomness in the crate flows through ChaCha8, a counter-based
//! stream cipher RNG: sample `s` of a run seeded with `seed` always reads
//! stream `(seed, s)`, so samples are reproducible independently of
//! evaluation order or parallelism.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// RNG for stream `stream` of the run identified by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A fair coin from the next word of the stream.
pub fn coin(rng: &mut impl RngCore) -> bool {
    rng.next_u64() & 1 == 1
}
