//! Counter-based seed derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha8 stream keyed by a
//! derived seed, so a tumor's draws depend only on (root seed, tumor index)
//! and never on how many draws earlier tumors consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Scan-level draws (tumor count, shared intensity, mix preset choice).
pub const STREAM_SCAN: u64 = 0;
/// Per-tumor parameter draws.
pub const STREAM_PARAMS: u64 = 1;
/// Texture noise field.
pub const STREAM_NOISE: u64 = 2;
/// Elastic displacement field.
pub const STREAM_ELASTIC: u64 = 3;
/// Center sampling for tumors without a pinned location.
pub const STREAM_PLACEMENT: u64 = 4;

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for item `index` under `root`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root) ^ splitmix64(index.wrapping_add(0xA5A5_A5A5)))
}

/// Independent generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
