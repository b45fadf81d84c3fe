//! Gaussian Fourier-feature positional encoding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::scalar::Scalar;

/// `m` scalar frequencies `sᵢ ~ N(0, σ²)`, each applied element-wise to the
/// point. Output layout per frequency: `sin(2π sᵢ x), sin(2π sᵢ y),
/// sin(2π sᵢ z), cos(2π sᵢ x), cos(2π sᵢ y), cos(2π sᵢ z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoder<T = f64> {
    frequencies: Vec<T>,
    sigma2: f64,
    seed: u64,
}

impl<T: Scalar> PositionalEncoder<T> {
    pub fn new(m: usize, sigma2: f64, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidConfig("positional encoding needs at least one frequency".into()));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidConfig(format!("frequency variance must be positive, got {sigma2}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma2.sqrt()).expect("positive std");
        let frequencies = (0..m).map(|_| T::of(normal.sample(&mut rng))).collect();
        Ok(Self {
            frequencies,
            sigma2,
            seed,
        })
    }

    /// Encoder with explicit frequencies, e.g. restored from a checkpoint.
    pub fn from_frequencies(frequencies: Vec<T>, sigma2: f64, seed: u64) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::InvalidConfig("positional encoding needs at least one frequency".into()));
        }
        Ok(Self {
            frequencies,
            sigma2,
            seed,
        })
    }

    pub fn frequencies(&self) -> &[T] {
        &self.frequencies
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn m(&self) -> usize {
        self.frequencies.len()
    }

    pub fn output_dim(&self) -> usize {
        6 * self.frequencies.len()
    }

    pub fn encode_into(&self, p: Point3<T>, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.output_dim());
        let two_pi = T::TAU();
        for (chunk, &s) in out.chunks_exact_mut(6).zip(&self.frequencies) {
            let w = two_pi * s;
            let (sx, cx) = (w * p.x).sin_cos();
            let (sy, cy) = (w * p.y).sin_cos();
            let (sz, cz) = (w * p.z).sin_cos();
            chunk.copy_from_slice(&[sx, sy, sz, cx, cy, cz]);
        }
    }

    pub fn encode(&self, p: Point3<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.output_dim()];
        self.encode_into(p, &mut out);
        out
    }
}
