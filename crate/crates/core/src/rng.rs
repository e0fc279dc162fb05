//! Reproducible random streams.
//!
//! All randomness flows from a user-visible 64-bit seed through ChaCha8
//! (a counter-based stream cipher). The 256-bit key is expanded from the
//! seed with `SeedableRng::seed_from_u64`, and each independent unit of work
//! (a bootstrap replicate, a Monte-Carlo repetition) gets its own ChaCha
//! stream id. Work units therefore draw the same numbers no matter which
//! thread runs them or in what order.
//!
//! Normal variates come from `rand_distr::StandardNormal` (ziggurat), and
//! Rademacher signs from one `bool` draw each.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent generator for work unit `stream` under `seed`.
pub fn substream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
