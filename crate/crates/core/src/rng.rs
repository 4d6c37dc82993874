//! Splittable, counter-based pseudo-randomness.
//!
//! Every stochastic choice in the crate draws from a [`PrngStream`] addressed
//! by `(seed, label)`. A stream's n-th output is a pure function of its key
//! and `n`, so forking a child never depends on how many values the parent
//! (or any sibling) has already drawn.

use crate::tensor::{Scalar, Tensor};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A labelled random stream. Cloning yields a stream that replays the same
/// values from the current position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrngStream {
    seed: u64,
    label: String,
    key: u64,
    counter: u64,
}

impl PrngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let key = mix64(mix64(seed.wrapping_add(GOLDEN)) ^ fnv1a(label.as_bytes()));
        PrngStream {
            seed,
            label,
            key,
            counter: 0,
        }
    }

    /// Child stream keyed by `parent_label/label`.
    ///
    /// # Panics
    /// If `label` is empty.
    pub fn fork(&self, label: &str) -> Self {
        assert!(!label.is_empty(), "stream fork label must be non-empty");
        let path = if self.label.is_empty() {
            label.to_string()
        } else {
            format!("{}/{}", self.label, label)
        };
        PrngStream::new(self.seed, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        let x = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(x.wrapping_mul(GOLDEN) ^ self.key).wrapping_add(self.key.rotate_left(29)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw (Box–Muller, one value per two uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Tensor of i.i.d. `[0, 1)` samples. An empty shape yields a scalar.
    pub fn uniform_tensor<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        let mut t = Tensor::zeros(shape.to_vec());
        for v in t.data_mut() {
            let u = T::c(self.uniform());
            // rounding to f32 can land exactly on 1.0
            *v = if u >= T::one() { T::one() - T::epsilon() } else { u };
        }
        t
    }

    /// Tensor of i.i.d. `N(0, std²)` samples.
    pub fn normal_tensor<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let mut t = Tensor::zeros(shape.to_vec());
        for v in t.data_mut() {
            *v = T::c(self.normal() * std);
        }
        t
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}
