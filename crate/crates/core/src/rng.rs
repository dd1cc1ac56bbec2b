//! Seed splitting.
//!
//! Every random draw in the crate comes from ChaCha8 keyed by the experiment
//! seed (`seed_from_u64`) with a fixed stream id per purpose. Per-item seeds
//! (one per dataset sample or eval instance) are the `index`-th 64-bit word of
//! that stream, so item `j` never depends on how many items came before it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Train = 3,
    Noise = 4,
    Verify = 5,
    Glyphs = 6,
}

pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed for item `index` of `stream`.
pub fn derive(seed: u64, s: Stream, index: u64) -> u64 {
    let mut rng = stream(seed, s);
    // one u64 is two 32-bit words
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

pub fn standard_normal(rng: &mut impl RngCore, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}
