//! Reproducible random streams.
//!
//! Every Monte Carlo run draws from its own ChaCha stream, derived from a
//! master seed and the run index. Results therefore do not depend on how
//! runs are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream for run `index` under `master`.
pub fn stream(master: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Derive an independent master seed for a labelled sub-study, so that e.g.
/// the calibration pilot and the evaluation runs never share streams.
pub fn derive(master: u64, label: u64) -> u64 {
    splitmix64(master ^ splitmix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
