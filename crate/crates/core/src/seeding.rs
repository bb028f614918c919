use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for one work item: the run seed picks the key and
/// the item index picks the stream, so items can be drawn in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for a named sub-task of a fold, e.g. model training vs data.
pub fn derive_seed(seed: u64, fold: u64, salt: u64) -> u64 {
    let mut z = seed ^ fold.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
