//! Reproducible random streams.
//!
//! Every stream is a ChaCha keystream selected by a `(root seed, stream id)`
//! pair, so draws never depend on which thread consumed which stream first.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::array::RealArray;

/// Fixed labels for the sub-streams derived from one root seed.
pub mod label {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const VALIDATION: u64 = 5;
    pub const SAMPLING: u64 = 6;
    pub const SYNTHETIC: u64 = 7;
    pub const CLIMATOLOGY: u64 = 8;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a path of labels into one stream id.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x5eed_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// A seeded random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha12Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(root_seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(root_seed);
        inner.set_stream(stream);
        Self { inner, spare: None }
    }

    /// Stream addressed by a label path, e.g. `[label::NOISE, epoch, batch]`.
    pub fn derive(root_seed: u64, path: &[u64]) -> Self {
        Self::new(root_seed, stream_id(path))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Standard normal draw (Box–Muller, both outputs used).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the logarithm stays finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// I.i.d. standard normal array; identical seeds give bit-identical output.
pub fn gaussian_sample(shape: &[usize], seed: u64) -> RealArray {
    let mut rng = RngStream::new(seed, 0);
    let n = shape.iter().product();
    RealArray::new(shape.to_vec(), rng.normals(n)).expect("length follows the shape")
}
