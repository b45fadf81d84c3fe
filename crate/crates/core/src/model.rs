//! The full SDF model: `F_Θ([V(p), γ(p)])`.

use crate::decoder::{ForwardCache, MlpDecoder};
use crate::encoding::PositionalEncoder;
use crate::error::{Error, Result};
use crate::feature_grid::{FeaturePlaneSet, InterpRecord};
use crate::geometry::Point3;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct SdfModel<T = f64> {
    pub grid: FeaturePlaneSet<T>,
    pub encoder: PositionalEncoder<T>,
    pub decoder: MlpDecoder<T>,
}

impl<T: Scalar> SdfModel<T> {
    pub fn new(grid: FeaturePlaneSet<T>, encoder: PositionalEncoder<T>, decoder: MlpDecoder<T>) -> Result<Self> {
        let expected = grid.output_dim() + encoder.output_dim();
        if decoder.input_dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: decoder.input_dim(),
            });
        }
        Ok(Self { grid, encoder, decoder })
    }

    /// Length of `Φ(p)`, `d·H + 6m`.
    pub fn input_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    /// Writes `Φ(p) = [V(p), γ(p)]` into `phi`. γ sees `p` rescaled so the
    /// extent spans `[−1, 1]`; the frequencies are then per half-extent
    /// rather than per metre.
    pub fn phi_into(&self, p: Point3<T>, phi: &mut [T], record: Option<&mut InterpRecord<T>>) -> Result<()> {
        let split = self.grid.output_dim();
        let (v, gamma) = phi.split_at_mut(split);
        self.grid.query_point_feature_into(p, v, record)?;
        self.encoder.encode_into(self.grid.extent().normalize(p), gamma);
        Ok(())
    }

    /// Runs the forward pass for `p`, leaving intermediates in `cache`.
    pub fn forward_with(&self, p: Point3<T>, cache: &mut ForwardCache<T>, record: Option<&mut InterpRecord<T>>) -> Result<T> {
        self.phi_into(p, &mut cache.activations[0], record)?;
        Ok(self.decoder.forward_cached(cache))
    }

    pub fn sdf(&self, p: Point3<T>) -> Result<T> {
        let mut cache = self.decoder.new_cache();
        self.forward_with(p, &mut cache, None)
    }

    pub fn evaluator(&self) -> SdfEvaluator<'_, T> {
        SdfEvaluator {
            model: self,
            cache: self.decoder.new_cache(),
        }
    }

    pub fn feature_parameter_count(&self) -> usize {
        self.grid.parameter_count()
    }

    pub fn mlp_parameter_count(&self) -> usize {
        self.decoder.parameter_count()
    }
}

/// Reusable buffers for evaluating many points with one model.
pub struct SdfEvaluator<'a, T: Scalar> {
    model: &'a SdfModel<T>,
    cache: ForwardCache<T>,
}

impl<T: Scalar> SdfEvaluator<'_, T> {
    pub fn eval(&mut self, p: Point3<T>) -> Result<T> {
        self.model.forward_with(p, &mut self.cache, None)
    }
}
