use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Per-epoch random subset: `floor(fraction * n)` distinct indices drawn
/// uniformly without replacement, in draw order.
///
/// Each `(seed, epoch)` pair selects its own ChaCha stream, so the draw is
/// reproducible and epochs are independent of one another.
pub fn subsample_epoch(n: usize, fraction: f64, seed: u64, epoch: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Validation("cannot subsample an empty manifest".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Validation(format!("epoch fraction {fraction} outside (0, 1]")));
    }
    let k = ((fraction * n as f64).floor() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    Ok(rand::seq::index::sample(&mut rng, n, k).into_vec())
}
