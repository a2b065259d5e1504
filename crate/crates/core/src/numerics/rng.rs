use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::tensor::Tensor;

/// Seeded, platform-independent random stream.
///
/// Uniforms are built from the top 53 bits of a ChaCha20 word; Gaussians
/// come from Box–Muller on those uniforms, so a given seed produces the same
/// bit patterns on every platform.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    counter: u64,
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0, inner: ChaCha20Rng::seed_from_u64(seed), spare: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of raw 64-bit words drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent child stream derived from this stream's next word.
    pub fn fork(&mut self) -> RngStream {
        RngStream::new(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.inner.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), (0..n).map(|_| self.normal()).collect())
    }

    pub fn uniform_tensor(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), (0..n).map(|_| self.uniform()).collect())
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}
