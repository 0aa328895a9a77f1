//! Deterministic, splittable random streams.
//!
//! Every sampler in the crate draws from `stream_rng(seed, index)`, a
//! counter-based scheme: stream `i` of a seed is independent of how many
//! draws other streams made. Parallel and serial runs therefore produce
//! bit-identical samples, and sample `i` is reproducible in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for logical stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
