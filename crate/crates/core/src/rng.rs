//! Counter-based random streams.
//!
//! Every consumer derives its generator from `(seed, domain, index)`, so a
//! draw never depends on how many draws some other consumer made before it.
//! This is what makes sampler replays and trainer resumes exact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream families sharing one user seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    SamplerInit = 1,
    SamplerStep = 2,
    NullTokens = 3,
    ParamInit = 4,
    TrainStep = 5,
    Shuffle = 6,
    Dataset = 7,
    GriffinLim = 8,
    Verify = 9,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((domain as u64) << 56));
    rng.set_stream(index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, Domain::SamplerStep, 3).random();
        let b: u64 = stream(7, Domain::SamplerStep, 3).random();
        let c: u64 = stream(7, Domain::SamplerStep, 4).random();
        let d: u64 = stream(7, Domain::SamplerInit, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
