use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

/// Supplies the exogenous standard-normal draws used by reparameterized
/// sampling. `None` means "use the distribution mean".
pub trait NoiseSource {
    fn draw(&mut self, dim: usize) -> Option<Tensor>;
}

/// Mean propagation: every latent is set to its distribution mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn draw(&mut self, _dim: usize) -> Option<Tensor> {
        None
    }
}

/// Seeded standard-normal draws. Two sources built from the same seed
/// produce the same sequence, which is how noise is frozen for gradient
/// checks and replayed runs.
#[derive(Debug, Clone)]
pub struct SeededNoise {
    rng: ChaCha8Rng,
}

impl SeededNoise {
    pub fn new(seed: u64) -> Self {
        SeededNoise {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl NoiseSource for SeededNoise {
    fn draw(&mut self, dim: usize) -> Option<Tensor> {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        Some(Tensor::vector(v))
    }
}

/// Deterministic 64-bit mixing of a seed with stream coordinates.
pub fn mix_seed(seed: u64, coords: &[u64]) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for c in coords {
        h ^= c.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        // splitmix64 finalizer
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}
