//! Helpers shared by the crate's tests.

use rand_chacha::ChaCha8Rng;

pub use crate::dense::{haar_mat2, haar_mat4, haar_state2, haar_unitary};

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    crate::rng::stream_rng(seed, 0)
}
