use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based generator: one base seed, one stream per replicate. Any
/// replicate can be regenerated in isolation and results cannot depend on
/// evaluation order or worker count.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a base seed with a stage tag and an index into an independent seed
/// for a nested randomized stage (cross-validation inside replicate r, the
/// bagging pass of replicate r, ...). Splitmix64 finalization keeps nearby
/// inputs uncorrelated.
pub(crate) fn derive_seed(base: u64, stage: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stage.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
