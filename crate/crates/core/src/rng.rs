//! Counter-based random streams.
//!
//! Every block of scenarios draws from its own ChaCha8 stream keyed by
//! `(seed, block index)`, so the generated matrix does not depend on how
//! blocks are scheduled across threads.

use crate::dist::normal_quantile;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rows per independently seeded block.
pub const BLOCK_ROWS: usize = 4096;

pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// Uniform draw on the open interval (0, 1) with 53 bits of resolution.
pub fn open_uniform<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw by inversion.
pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    normal_quantile(open_uniform(rng))
}
