//! Counter-based random substreams.
//!
//! Every random draw in the crate comes from a ChaCha stream selected by
//! `(seed, replication, purpose)`. Streams never overlap, so results do not
//! depend on the order in which replications or bootstrap draws are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a substream is used for. The discriminant is folded into the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Design = 1,
    Noise = 2,
    Split = 3,
    Bootstrap = 4,
    SimulatedPsi = 5,
    Oracle = 6,
}

pub type StreamRng = ChaCha8Rng;

/// Independent generator for `(seed, index, purpose)`.
pub fn substream(seed: u64, index: u64, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index << 8) | purpose as u64);
    rng
}
