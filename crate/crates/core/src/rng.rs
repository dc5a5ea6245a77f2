use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every stochastic routine in the crate draws from this generator so that
/// results depend only on the integer seed.
pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
