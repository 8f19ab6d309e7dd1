//! Seedable random streams.
//!
//! Every stochastic component draws from a ChaCha stream addressed by
//! `(seed, stream)`. Independent work items (generation candidates, dataset
//! pairs, experiment runs) get their own stream index, which makes parallel
//! execution deterministic and lets training resume from a recorded position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// RNG for stream `stream` of the master `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One standard-normal draw. Sampled at `f64` so the realized sequence does
/// not depend on the scalar type the pipeline is instantiated at.
pub fn normal<T: Scalar, R: Rng>(rng: &mut R) -> T {
    let v: f64 = rng.sample(StandardNormal);
    T::cast(v)
}

/// Tensor of i.i.d. standard-normal values.
pub fn normal_tensor<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(normal::<T, _>(rng));
    }
    Tensor::from_vec(shape, data)
}

/// One uniform draw in `[lo, hi]`, sampled at `f64` for the same reason.
pub fn uniform<T: Scalar, R: Rng>(lo: f64, hi: f64, rng: &mut R) -> T {
    if lo == hi {
        return T::cast(lo);
    }
    T::cast(rng.gen_range(lo..=hi))
}

/// Serializable position of a training stream, enough to resume it exactly.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl RngState {
    pub fn capture(seed: u64, stream: u64, rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        RngState {
            seed,
            stream,
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = stream_rng(self.seed, self.stream);
        rng.set_word_pos(((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128);
        rng
    }
}
