//! The shared MLP that decodes a point feature into a signed distance, with a
//! hand-written backward pass and Adam updates.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::scalar::Scalar;

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
        }
    }

    pub fn code(self) -> u64 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected layer, `out = W·in + b`, with `W` stored row-major `rows × cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    m_w: Vec<T>,
    v_w: Vec<T>,
    m_b: Vec<T>,
    v_b: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn from_parts(rows: usize, cols: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: weights.len(),
            });
        }
        if bias.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                got: bias.len(),
            });
        }
        let n = weights.len();
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
            m_w: vec![T::zero(); n],
            v_w: vec![T::zero(); n],
            m_b: vec![T::zero(); rows],
            v_b: vec![T::zero(); rows],
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[inline]
    fn affine(&self, input: &[T], out: &mut [T]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, x) in row.iter().zip(input) {
                acc += *w * *x;
            }
            *o = acc;
        }
    }
}

/// Per-layer pre-activations and activations from one forward pass, plus
/// scratch space reused by the backward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache<T> {
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s output.
    pub activations: Vec<Vec<T>>,
    pub preactivations: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> T {
        self.activations.last().and_then(|a| a.first().copied()).unwrap_or_else(T::zero)
    }
}

/// Gradients laid out like the decoder's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Scalar> MlpGradients<T> {
    pub fn zeros_like(mlp: &MlpDecoder<T>) -> Self {
        Self {
            weights: mlp.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            bias: mlp.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).flatten().for_each(|x| *x *= s);
    }

    pub fn zero(&mut self) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).flatten().for_each(|x| *x = T::zero());
    }

    /// Flattened in parameter order: per layer, weights then bias.
    pub fn flat(&self) -> Vec<T> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpDecoder<T = f64> {
    layers: Vec<DenseLayer<T>>,
    activation: Activation,
    step: u64,
}

impl<T: Scalar> MlpDecoder<T> {
    /// `depth` hidden layers of `hidden_width` units followed by a linear
    /// scalar head. Weights are Xavier-uniform, biases zero.
    pub fn new(input_dim: usize, hidden_width: usize, depth: usize, activation: Activation, seed: u64) -> Result<Self> {
        if input_dim == 0 || (depth > 0 && hidden_width == 0) {
            return Err(Error::InvalidConfig(format!(
                "decoder dimensions must be positive (input {input_dim}, hidden {hidden_width})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(depth + 1);
        let mut fan_in = input_dim;
        for l in 0..=depth {
            let fan_out = if l == depth { 1 } else { hidden_width };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| T::of(rng.random_range(-bound..bound)))
                .collect();
            layers.push(DenseLayer::from_parts(fan_out, fan_in, weights, vec![T::zero(); fan_out])?);
            fan_in = fan_out;
        }
        Ok(Self {
            layers,
            activation,
            step: 0,
        })
    }

    /// Assembles a decoder from explicit layers (checkpoint restore, tests).
    pub fn from_layers(layers: Vec<DenseLayer<T>>, activation: Activation, step: u64) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::InvalidConfig("decoder needs at least one layer".into()));
        };
        if last.rows != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: last.rows,
            });
        }
        for pair in layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].rows,
                    got: pair[1].cols,
                });
            }
        }
        Ok(Self {
            layers,
            activation,
            step,
        })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    /// Parameter `i` in flattened order (per layer, weights then bias).
    pub fn parameter_mut(&mut self, mut i: usize) -> &mut T {
        for l in &mut self.layers {
            if i < l.weights.len() {
                return &mut l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn new_cache(&self) -> ForwardCache<T> {
        let mut activations = vec![vec![T::zero(); self.input_dim()]];
        let mut preactivations = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            activations.push(vec![T::zero(); l.rows]);
            preactivations.push(vec![T::zero(); l.rows]);
        }
        let widest = self.layers.iter().map(|l| l.rows.max(l.cols)).max().unwrap_or(1);
        ForwardCache {
            activations,
            preactivations,
            delta: vec![T::zero(); widest],
            delta_prev: vec![T::zero(); widest],
        }
    }

    /// Forward pass writing every intermediate into `cache`, which must come
    /// from [`Self::new_cache`] (its input slot may already hold `phi`).
    pub fn forward_into(&self, phi: &[T], cache: &mut ForwardCache<T>) -> Result<T> {
        if phi.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: phi.len(),
            });
        }
        if cache.activations[0].as_slice() != phi {
            cache.activations[0].copy_from_slice(phi);
        }
        Ok(self.forward_cached(cache))
    }

    /// Forward pass on whatever input is already stored in `cache.activations[0]`.
    pub fn forward_cached(&self, cache: &mut ForwardCache<T>) -> T {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (inputs, outputs) = cache.activations.split_at_mut(l + 1);
            let z = &mut cache.preactivations[l];
            layer.affine(&inputs[l], z);
            let a = &mut outputs[0];
            if l == last {
                a.copy_from_slice(z);
            } else {
                for (ai, &zi) in a.iter_mut().zip(z.iter()) {
                    *ai = self.activation.apply(zi);
                }
            }
        }
        cache.output()
    }

    pub fn forward(&self, phi: &[T]) -> Result<(T, ForwardCache<T>)> {
        let mut cache = self.new_cache();
        let s = self.forward_into(phi, &mut cache)?;
        Ok((s, cache))
    }

    /// Reverse-mode pass for `dL/ds = dl_ds`; parameter gradients are added
    /// into `grads` and the input gradient is written to `dl_dphi`.
    pub fn backward_accumulate(&self, cache: &mut ForwardCache<T>, dl_ds: T, grads: &mut MlpGradients<T>, dl_dphi: &mut [T]) {
        debug_assert_eq!(dl_dphi.len(), self.input_dim());
        let ForwardCache {
            activations,
            preactivations,
            delta,
            delta_prev,
        } = cache;
        delta[0] = dl_ds;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &activations[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.bias[l];
            for r in 0..layer.rows {
                let dr = delta[r];
                gb[r] += dr;
                if dr != T::zero() {
                    let row = &mut gw[r * layer.cols..(r + 1) * layer.cols];
                    for (g, &x) in row.iter_mut().zip(input) {
                        *g += dr * x;
                    }
                }
            }
            let out: &mut [T] = if l == 0 { &mut *dl_dphi } else { &mut delta_prev[..layer.cols] };
            out.iter_mut().for_each(|v| *v = T::zero());
            for r in 0..layer.rows {
                let dr = delta[r];
                if dr == T::zero() {
                    continue;
                }
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += dr * w;
                }
            }
            if l > 0 {
                let z = &preactivations[l - 1];
                let a = &activations[l];
                for c in 0..layer.cols {
                    delta_prev[c] *= self.activation.derivative(z[c], a[c]);
                }
                std::mem::swap(delta, delta_prev);
            }
        }
    }

    pub fn backward(&self, cache: &mut ForwardCache<T>, dl_ds: T) -> (MlpGradients<T>, Vec<T>) {
        let mut grads = MlpGradients::zeros_like(self);
        let mut dl_dphi = vec![T::zero(); self.input_dim()];
        self.backward_accumulate(cache, dl_ds, &mut grads, &mut dl_dphi);
        (grads, dl_dphi)
    }

    /// Increments the step counter and applies one Adam update.
    pub fn adam_step(&mut self, grads: &MlpGradients<T>, adam: &Adam<T>) {
        self.step += 1;
        let step = self.step;
        for (l, layer) in self.layers.iter_mut().enumerate() {
            adam.update(step, &mut layer.weights, &grads.weights[l], &mut layer.m_w, &mut layer.v_w);
            adam.update(step, &mut layer.bias, &grads.bias[l], &mut layer.m_b, &mut layer.v_b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_forward(mlp: &MlpDecoder<f64>, phi: &[f64]) -> f64 {
        let mut a = phi.to_vec();
        let n = mlp.layers().len();
        for (l, layer) in mlp.layers().iter().enumerate() {
            let mut z = vec![0.0; layer.rows];
            for (r, zr) in z.iter_mut().enumerate() {
                *zr = layer.bias[r];
                for c in 0..layer.cols {
                    *zr += layer.weights[r * layer.cols + c] * a[c];
                }
            }
            a = if l + 1 == n {
                z
            } else {
                z.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect()
            };
        }
        a[0]
    }

    #[test]
    fn parameter_counts() {
        let mlp = MlpDecoder::<f64>::new(120, 32, 2, Activation::Relu, 1).unwrap();
        assert_eq!(mlp.parameter_count(), 120 * 32 + 32 + 32 * 32 + 32 + 32 + 1);
        assert_eq!(mlp.parameter_count(), 4961);
        let lin = MlpDecoder::<f64>::new(120, 32, 0, Activation::Relu, 1).unwrap();
        assert_eq!(lin.parameter_count(), 121);
        assert!(MlpDecoder::<f64>::new(0, 32, 2, Activation::Relu, 1).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = MlpDecoder::<f64>::new(20, 8, 2, Activation::Relu, 99).unwrap();
        let b = MlpDecoder::<f64>::new(20, 8, 2, Activation::Relu, 99).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 28.0).sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= bound));
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let layer = DenseLayer::from_parts(1, 3, vec![0.0; 3], vec![0.0]).unwrap();
        let mlp = MlpDecoder::from_layers(vec![layer], Activation::Relu, 0).unwrap();
        assert_eq!(mlp.forward(&[1.0, 2.0, 3.0]).unwrap().0, 0.0);
    }

    #[test]
    fn linear_pass_through_and_closed_form_backward() {
        let layer = DenseLayer::from_parts(1, 3, vec![1.0, 0.0, 0.0], vec![0.0]).unwrap();
        let mlp = MlpDecoder::from_layers(vec![layer], Activation::Relu, 0).unwrap();
        let phi = [0.5, -2.0, 3.0];
        let (s, mut cache) = mlp.forward(&phi).unwrap();
        assert_eq!(s, 0.5);
        let (g, dphi) = mlp.backward(&mut cache, 2.0);
        assert_eq!(g.weights[0], vec![1.0, -4.0, 6.0]);
        assert_eq!(g.bias[0], vec![2.0]);
        assert_eq!(dphi, vec![2.0, 0.0, 0.0]);
        let (g, dphi) = mlp.backward(&mut cache, 0.0);
        assert!(g.flat().iter().all(|v| *v == 0.0));
        assert!(dphi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let mlp = MlpDecoder::<f64>::new(4, 3, 1, Activation::Relu, 1).unwrap();
        assert!(matches!(mlp.forward(&[1.0; 5]), Err(Error::DimensionMismatch { expected: 4, got: 5 })));
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..10 {
            let mlp = MlpDecoder::<f64>::new(30, 16, 2, Activation::Relu, seed).unwrap();
            let phi: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (s, _) = mlp.forward(&phi).unwrap();
            assert!((s - naive_forward(&mlp, &phi)).abs() < 1e-12);
        }
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let act = if trial % 2 == 0 { Activation::Relu } else { Activation::Tanh };
            let mut mlp = MlpDecoder::<f64>::new(12, 8, 2, act, trial).unwrap();
            for l in mlp.layers_mut() {
                l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
            let phi: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, mut cache) = mlp.forward(&phi).unwrap();
            let (g, dphi) = mlp.backward(&mut cache, 1.0);
            let h = 1e-5;
            let flat = g.flat();
            for (i, &an) in flat.iter().enumerate() {
                let orig = *mlp.parameter_mut(i);
                *mlp.parameter_mut(i) = orig + h;
                let up = mlp.forward(&phi).unwrap().0;
                *mlp.parameter_mut(i) = orig - h;
                let down = mlp.forward(&phi).unwrap().0;
                *mlp.parameter_mut(i) = orig;
                let fd = (up - down) / (2.0 * h);
                assert!(relative_error(fd, an) < 1e-4, "param {i}: fd {fd} vs {an}");
            }
            for k in 0..phi.len() {
                let mut p = phi.clone();
                p[k] += h;
                let up = mlp.forward(&p).unwrap().0;
                p[k] -= 2.0 * h;
                let down = mlp.forward(&p).unwrap().0;
                let fd = (up - down) / (2.0 * h);
                assert!(relative_error(fd, dphi[k]) < 1e-4, "input {k}: fd {fd} vs {}", dphi[k]);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop_and_counts_steps() {
        let mut mlp = MlpDecoder::<f64>::new(6, 4, 1, Activation::Relu, 2).unwrap();
        let before = mlp.clone();
        let g = MlpGradients::zeros_like(&mlp);
        let adam = Adam::new(1e-3, 0.9, 0.999, 1e-8);
        mlp.adam_step(&g, &adam);
        mlp.adam_step(&g, &adam);
        assert_eq!(mlp.step(), 2);
        assert_eq!(mlp.layers()[0].weights, before.layers()[0].weights);
    }

    #[test]
    fn adam_runs_are_bit_identical() {
        let run = || {
            let mut mlp = MlpDecoder::<f64>::new(6, 4, 2, Activation::Relu, 5).unwrap();
            let adam = Adam::new(1e-2, 0.9, 0.999, 1e-8);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..25 {
                let phi: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (s, mut cache) = mlp.forward(&phi).unwrap();
                let (g, _) = mlp.backward(&mut cache, s - 0.3);
                mlp.adam_step(&g, &adam);
            }
            mlp
        };
        assert_eq!(run(), run());
    }
}
