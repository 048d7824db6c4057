//! Seeded random streams.
//!
//! Every consumer gets its own ChaCha8 stream derived from the run seed and a
//! stream id (`set_stream`), so the values a segment draws never depend on the
//! order in which other segments were visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids for segment sampling are the segment ids themselves; other
/// consumers use ids offset by these tags so they never collide.
pub const STREAM_SEGMENTS: u64 = 0;
pub const STREAM_FLYTHROUGH: u64 = 1 << 40;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn segment_stream(seed: u64, segment_id: u32) -> ChaCha8Rng {
    stream(seed, STREAM_SEGMENTS + segment_id as u64)
}
