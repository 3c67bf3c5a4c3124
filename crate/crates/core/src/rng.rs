//! Counter-based random streams.
//!
//! Every random draw is keyed by `(seed, index)`: the generator for item
//! `index` is the ChaCha8 stream numbered `index` under key `seed`. Work can be
//! split over any number of threads and the draws for a given item never
//! change.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct StreamFactory {
    base: ChaCha8Rng,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        StreamFactory {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator for item `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(index);
        rng.set_word_pos(0);
        rng
    }
}
