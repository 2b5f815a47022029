//! Counter-based seed derivation.
//!
//! Every parallel task draws from its own ChaCha stream selected by a task
//! index, so results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for stream `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a (domain, major, minor) triple into a stream id.
pub(crate) fn stream_id(domain: u8, major: u64, minor: u64) -> u64 {
    (u64::from(domain) << 56) | ((major & 0xFF_FFFF) << 32) | (minor & 0xFFFF_FFFF)
}
