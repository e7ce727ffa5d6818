use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for one unit of work (a row, a feature), so results do
/// not depend on the order or thread in which units run.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
