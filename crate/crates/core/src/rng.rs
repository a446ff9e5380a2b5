//! Seeded random streams.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

/// The generator used everywhere in the crate.
pub type LabRng = rand_chacha::ChaCha12Rng;

pub fn seeded(seed: u64) -> LabRng {
    LabRng::seed_from_u64(seed)
}

/// An independent stream for worker `stream` of a run seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> LabRng {
    let mut rng = LabRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, std_dev: f64, out: &mut [f64]) {
    for v in out {
        *v = std_dev * standard_normal(rng);
    }
}
