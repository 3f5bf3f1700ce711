//! Reproducible per-trajectory random streams.
//!
//! Trajectory `i` of a run seeded with `master` draws from ChaCha8 keyed by
//! `master` on stream `i`. Streams are independent, so the draws of one
//! trajectory never depend on how many others ran or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamSeed {
    pub master: u64,
    pub stream: u64,
}

impl StreamSeed {
    pub fn new(master: u64, stream: u64) -> Self {
        StreamSeed { master, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }

    /// A seed for a nested family of streams (e.g. the unobserved records
    /// drawn for one observed trajectory).
    pub fn child(&self, salt: u64) -> StreamSeed {
        // splitmix64 finaliser over (master, stream, salt)
        let mut z = self
            .master
            .wrapping_add(self.stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(salt.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        StreamSeed::new(z ^ (z >> 31), 0)
    }
}

impl From<u64> for StreamSeed {
    fn from(master: u64) -> Self {
        StreamSeed::new(master, 0)
    }
}
