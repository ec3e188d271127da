use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent streams derived from one seed. Each consumer of randomness in
/// a run (noise, selections, samplers) gets its own stream so that changing
/// one does not shift the draws of another.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Stream {
    Noise = 1,
    Selection = 2,
    Sampling = 3,
}

pub(crate) fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
