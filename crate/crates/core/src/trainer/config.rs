use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::Activation;
use crate::error::{Error, Result};

/// Every tunable of a training run. Parsed from flat `key = value` text
/// (`#` comments allowed); unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Near-surface samples per ray.
    pub surface_samples: u64,
    /// Free-space samples per ray.
    pub free_samples: u64,
    /// Truncation band half-width (m).
    pub truncation: f64,
    /// Scale applied inside the sigmoid of the loss (m).
    pub sigmoid_scale: f64,
    pub batch_rays: u64,
    pub iterations: u64,
    pub lr_features: f64,
    pub lr_mlp: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Number of stored quadtree levels.
    pub levels: u64,
    pub max_depth: u64,
    pub feature_dim: u64,
    /// Number of Fourier frequencies.
    pub frequencies: u64,
    pub sigma2: f64,
    /// Hidden layers in the decoder.
    pub mlp_depth: u64,
    pub hidden_width: u64,
    pub activation: String,
    /// Leaf cell side (m).
    pub leaf_resolution: f64,
    pub feature_init_std: f64,
    /// Free-space samples start this far from the sensor (m).
    pub free_space_start: f64,
    /// Returns beyond this range are dropped (m).
    pub max_range: f64,
    /// Side of the coarse occupancy cells used to bound meshing (m).
    pub mask_resolution: f64,
    pub mask_dilation: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            surface_samples: 3,
            free_samples: 3,
            truncation: 0.3,
            sigmoid_scale: 0.05,
            batch_rays: 1024,
            iterations: 2000,
            lr_features: 1e-2,
            lr_mlp: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            levels: 3,
            max_depth: 12,
            feature_dim: 8,
            frequencies: 16,
            sigma2: 50.0,
            mlp_depth: 2,
            hidden_width: 32,
            activation: "relu".into(),
            leaf_resolution: 0.1,
            feature_init_std: 0.01,
            free_space_start: 0.5,
            max_range: 60.0,
            mask_resolution: 0.1,
            mask_dilation: 1,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn activation(&self) -> Result<Activation> {
        self.activation.parse()
    }

    /// `d·H + 6m`.
    pub fn decoder_input_dim(&self) -> usize {
        (self.feature_dim * self.levels + 6 * self.frequencies) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let positive = [
            ("truncation", self.truncation),
            ("sigmoid_scale", self.sigmoid_scale),
            ("lr_features", self.lr_features),
            ("lr_mlp", self.lr_mlp),
            ("adam_eps", self.adam_eps),
            ("sigma2", self.sigma2),
            ("leaf_resolution", self.leaf_resolution),
            ("max_range", self.max_range),
            ("mask_resolution", self.mask_resolution),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.feature_init_std >= 0.0) || !(self.free_space_start >= 0.0) {
            return bad("feature_init_std and free_space_start must be non-negative".into());
        }
        if self.surface_samples == 0 && self.free_samples == 0 {
            return bad("surface_samples and free_samples cannot both be zero".into());
        }
        if self.batch_rays == 0 {
            return bad("batch_rays must be at least 1".into());
        }
        if self.max_depth == 0 || self.max_depth > 31 {
            return bad(format!("max_depth {} outside 1..=31", self.max_depth));
        }
        if self.levels == 0 || self.levels > self.max_depth {
            return bad(format!("levels {} must be in 1..={}", self.levels, self.max_depth));
        }
        if self.feature_dim == 0 || self.frequencies == 0 {
            return bad("feature_dim and frequencies must be at least 1".into());
        }
        if self.mlp_depth > 0 && self.hidden_width == 0 {
            return bad("hidden_width must be at least 1".into());
        }
        self.activation()?;
        Ok(())
    }
}
