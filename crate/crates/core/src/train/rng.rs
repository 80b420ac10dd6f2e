use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bag::SlideBag;

/// Purpose tag for a derived random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Epoch = 1,
    Folds = 2,
    ModelInit = 3,
    Cohort = 4,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent ChaCha stream for `(seed, purpose, a, b)`; used so that fold
/// and epoch randomness never depends on execution order.
pub fn stream_rng(seed: u64, purpose: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = splitmix(splitmix(splitmix(purpose as u64) ^ a) ^ b.rotate_left(17));
    rng.set_stream(id);
    rng
}

/// Sorted tile indices to keep, or `None` when the bag already fits.
pub fn subsample_indices(n: usize, max_tiles: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    if n <= max_tiles {
        return None;
    }
    let mut idx = index::sample(rng, n, max_tiles).into_vec();
    idx.sort_unstable();
    Some(idx)
}

/// Uniform subsample without replacement of at most `max_tiles` tiles.
pub fn subsample_tiles(bag: &SlideBag, max_tiles: usize, rng: &mut ChaCha8Rng) -> SlideBag {
    match subsample_indices(bag.n_tiles(), max_tiles.max(1), rng) {
        Some(idx) => bag.select(&idx),
        None => bag.clone(),
    }
}
