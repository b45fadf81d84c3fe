//! Bias-corrected Adam, shared by the MLP and the sparse feature tables.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr: T::of(lr),
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            eps: T::of(eps),
        }
    }

    /// Bias-correction denominators `(1 − β₁ᵗ, 1 − β₂ᵗ)` for step `t ≥ 1`.
    pub fn corrections(&self, step: u64) -> (T, T) {
        let t = step.min(i32::MAX as u64) as i32;
        (T::one() - self.beta1.powi(t), T::one() - self.beta2.powi(t))
    }

    /// Applies one update to `params` in place. `step` is the 1-based step
    /// index used for bias correction.
    pub fn update(&self, step: u64, params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T]) {
        debug_assert!(step >= 1);
        debug_assert!(params.len() == grads.len() && m.len() == grads.len() && v.len() == grads.len());
        let (c1, c2) = self.corrections(step);
        let one = T::one();
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
