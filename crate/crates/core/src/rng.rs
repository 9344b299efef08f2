use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent, reproducible random stream for `(seed, label, index)`.
///
/// Separate concerns (splits, shuffles, dropout per task) draw from separate
/// streams so that enabling one never shifts another's sequence.
pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng
}
