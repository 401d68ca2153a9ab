//! Seeded random streams.
//!
//! Every entity of an instance (taste parameters, attributes, consumer draws,
//! start perturbation) reads from its own ChaCha stream under a shared seed,
//! so resizing one entity never perturbs another.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Stream {
    Beta = 0,
    Attributes = 1,
    Draws = 2,
    Perturbation = 3,
}

pub(crate) fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for replication `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub(crate) fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Row-major fill: adding consumers appends draws without moving earlier ones.
    DMatrix::from_row_iterator(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)))
}

pub(crate) fn uniform_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random::<f64>()).collect()
}

pub(crate) fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn child_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..100).map(|r| derive_seed(7, r)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        assert_eq!(derive_seed(7, 3), seeds[3]);
        assert_ne!(derive_seed(8, 3), seeds[3]);
    }

    #[test]
    fn streams_are_independent() {
        let a: f64 = stream(1, Stream::Beta).random();
        let b: f64 = stream(1, Stream::Draws).random();
        assert_ne!(a, b);
        let again: f64 = stream(1, Stream::Beta).random();
        assert_eq!(a, again);
    }
}
