use std::hash::Hasher;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Fnv64;

/// Seeded random stream scoped to one simulated entity.
///
/// The generator seed mixes the run seed with a hash of `stream_id`, so each
/// broker, node pool or job generator draws from its own sequence and adding
/// an entity leaves every other entity's draws untouched.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: impl Into<String>) -> Self {
        let stream_id = stream_id.into();
        let mut h = Fnv64::default();
        h.write(stream_id.as_bytes());
        let mixed = splitmix64(seed ^ splitmix64(h.finish()));
        RngStream {
            seed,
            stream_id,
            rng: ChaCha8Rng::seed_from_u64(mixed),
        }
    }

    /// A sub-stream labelled `<stream_id>/<label>` under the same run seed.
    pub fn child(&self, label: impl std::fmt::Display) -> Self {
        RngStream::new(self.seed, format!("{}/{}", self.stream_id, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
