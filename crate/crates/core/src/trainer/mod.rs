//! Test-time optimisation of the feature planes and decoder from range rays.

mod checkpoint;
mod config;
mod loss;
mod objective;
mod sampling;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LayerSnapshot, TableSnapshot, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use loss::bce_loss;
pub use objective::{accumulate_batch_gradients, batch_loss};
pub use sampling::{sample_ray, sample_ray_into, sdf_label, SampleKind, SamplingParams, TrainingSample};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{MlpDecoder, MlpGradients};
use crate::encoding::PositionalEncoder;
use crate::error::{Error, Result};
use crate::feature_grid::FeaturePlaneSet;
use crate::geometry::{Extent, Point3, Ray};
use crate::io::ScanSet;
use crate::meshing::OccupancyMask;
use crate::model::SdfModel;
use crate::optim::Adam;
use crate::scalar::Scalar;

/// Independent RNG streams derived from the configured seed.
pub(crate) fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub(crate) const STREAM_ENCODER: u64 = 1;
const STREAM_DECODER: u64 = 2;
const STREAM_TRAIN: u64 = 3;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrainStats {
    /// Rays discarded because their depth did not exceed the truncation band.
    pub degenerate_rays: usize,
    /// Rays discarded for exceeding the maximum range.
    pub far_rays: usize,
    /// Samples skipped because they fell outside the mapped extent.
    pub out_of_extent_samples: usize,
}

pub struct Trainer<T: Scalar = f64> {
    cfg: TrainConfig,
    model: SdfModel<T>,
    rays: Vec<Ray<T>>,
    mask: OccupancyMask,
    sampling: SamplingParams<T>,
    adam_features: Adam<T>,
    adam_mlp: Adam<T>,
    rng: ChaCha8Rng,
    grads: MlpGradients<T>,
    stats: TrainStats,
    last_loss: Option<T>,
}

impl<T: Scalar> Trainer<T> {
    /// Filters the rays, fits the extent around them, and initialises the model.
    pub fn new(rays: &[Ray<f64>], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut stats = TrainStats::default();
        let mut kept = Vec::with_capacity(rays.len());
        for r in rays {
            if r.depth > cfg.max_range {
                stats.far_rays += 1;
            } else if !(r.depth > cfg.truncation) {
                stats.degenerate_rays += 1;
            } else {
                kept.push(*r);
            }
        }
        if kept.is_empty() {
            return Err(Error::InvalidConfig("no usable rays after range filtering".into()));
        }
        let points = kept.iter().flat_map(|r| [r.origin, r.endpoint()]);
        let extent = Extent::fit(points, cfg.truncation, cfg.leaf_resolution, cfg.max_depth as u32)?;
        Self::with_extent(kept, extent, cfg, stats)
    }

    /// Like [`Self::new`] but with a caller-chosen extent and no ray filtering.
    pub fn with_extent(rays: Vec<Ray<f64>>, extent: Extent<f64>, cfg: TrainConfig, stats: TrainStats) -> Result<Self> {
        cfg.validate()?;
        if extent.max_depth as u64 != cfg.max_depth || extent.leaf_resolution != cfg.leaf_resolution {
            return Err(Error::InvalidConfig("extent does not match leaf resolution / max depth".into()));
        }
        let mask = OccupancyMask::from_rays(
            &rays,
            cfg.free_space_start,
            cfg.truncation,
            cfg.mask_resolution,
            cfg.mask_dilation as u32,
        );
        let model = init_model::<T>(&cfg, extent.cast())?;
        let rays = rays
            .iter()
            .map(|r| Ray {
                origin: r.origin.cast(),
                direction: r.direction.cast(),
                depth: T::of(r.depth),
            })
            .collect();
        Ok(Self {
            sampling: SamplingParams {
                surface_samples: cfg.surface_samples as usize,
                free_samples: cfg.free_samples as usize,
                truncation: T::of(cfg.truncation),
                free_space_start: T::of(cfg.free_space_start),
            },
            adam_features: Adam::new(cfg.lr_features, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            adam_mlp: Adam::new(cfg.lr_mlp, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            rng: ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_TRAIN)),
            grads: MlpGradients::zeros_like(&model.decoder),
            last_loss: None,
            cfg,
            model,
            rays,
            mask,
            stats,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &SdfModel<T> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut SdfModel<T> {
        &mut self.model
    }

    pub fn rays(&self) -> &[Ray<T>] {
        &self.rays
    }

    pub fn mask(&self) -> &OccupancyMask {
        &self.mask
    }

    pub fn stats(&self) -> &TrainStats {
        &self.stats
    }

    pub fn step_count(&self) -> u64 {
        self.model.decoder.step()
    }

    pub fn last_loss(&self) -> Option<T> {
        self.last_loss
    }

    /// Draws `batch_rays` rays uniformly and samples each. Samples outside the
    /// extent are dropped.
    pub fn draw_batch(&mut self) -> Vec<TrainingSample<T>> {
        let mut batch = Vec::with_capacity(self.cfg.batch_rays as usize * (self.sampling.surface_samples + self.sampling.free_samples));
        for _ in 0..self.cfg.batch_rays {
            let ray = self.rays[self.rng.random_range(0..self.rays.len())];
            // rays were filtered against the truncation band at construction
            sample_ray_into(&ray, &self.sampling, &mut self.rng, &mut batch).expect("non-degenerate ray");
        }
        let extent = *self.model.grid.extent();
        let before = batch.len();
        batch.retain(|s| extent.contains(s.point));
        self.stats.out_of_extent_samples += before - batch.len();
        batch
    }

    /// Allocates missing vertices for `batch` and takes one Adam step on it.
    /// Returns the mean loss before the update.
    pub fn step_on(&mut self, batch: &[TrainingSample<T>]) -> Result<T> {
        for s in batch {
            self.model.grid.allocate_for_point(s.point, &mut self.rng)?;
        }
        self.grads.zero();
        let loss = accumulate_batch_gradients(&mut self.model, batch, T::of(self.cfg.sigmoid_scale), &mut self.grads)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.step_count() + 1,
                loss: loss.as_f64(),
            });
        }
        self.model.decoder.adam_step(&self.grads, &self.adam_mlp);
        let step = self.model.decoder.step();
        self.model.grid.adam_step(&self.adam_features, step);
        self.last_loss = Some(loss);
        Ok(loss)
    }

    /// One iteration: draw, allocate, forward, backward, update.
    pub fn step(&mut self) -> Result<T> {
        let batch = self.draw_batch();
        self.step_on(&batch)
    }

    /// Runs the configured number of iterations, calling `progress` after
    /// each with `(iteration, loss)`.
    pub fn run(&mut self, mut progress: impl FnMut(u64, T)) -> Result<()> {
        let total = self.cfg.iterations;
        let mut running = 0.0;
        for it in 1..=total {
            let loss = self.step()?;
            running += loss.as_f64();
            progress(it, loss);
            if it % 100 == 0 || it == total {
                let n = if it % 100 == 0 { 100 } else { it % 100 };
                info!(
                    "iter {it}/{total}: mean loss {:.5}, {} feature vertices",
                    running / n as f64,
                    self.model.grid.entry_count()
                );
                running = 0.0;
            } else {
                debug!("iter {it}: loss {:.5}", loss.as_f64());
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, &self.cfg, &self.mask)
    }
}

/// Fresh model for `cfg`: empty feature planes, seeded encoder and decoder.
pub fn init_model<T: Scalar>(cfg: &TrainConfig, extent: Extent<T>) -> Result<SdfModel<T>> {
    let grid = FeaturePlaneSet::new(extent, cfg.feature_dim as usize, cfg.levels as u32, cfg.feature_init_std)?;
    let encoder = PositionalEncoder::new(cfg.frequencies as usize, cfg.sigma2, stream_seed(cfg.seed, STREAM_ENCODER))?;
    let decoder = MlpDecoder::new(
        cfg.decoder_input_dim(),
        cfg.hidden_width as usize,
        cfg.mlp_depth as usize,
        cfg.activation()?,
        stream_seed(cfg.seed, STREAM_DECODER),
    )?;
    SdfModel::new(grid, encoder, decoder)
}

/// Rays from every frame of `scans`, sensor origin to world-frame endpoint.
pub fn rays_from_scans(scans: &ScanSet) -> Vec<Ray<f64>> {
    scans
        .frames
        .iter()
        .flat_map(|f| {
            let origin: Point3<f64> = f.pose.translation;
            f.points.iter().filter_map(move |&p| Ray::between(origin, f.pose.transform_point(p)))
        })
        .collect()
}

/// Trains a model on `scans` and returns its checkpoint.
pub fn train(scans: &ScanSet, cfg: &TrainConfig) -> Result<Checkpoint> {
    let rays = rays_from_scans(scans);
    let mut trainer = Trainer::<f64>::new(&rays, cfg.clone())?;
    let stats = trainer.stats();
    if stats.degenerate_rays + stats.far_rays > 0 {
        info!(
            "skipped {} degenerate and {} out-of-range rays",
            stats.degenerate_rays, stats.far_rays
        );
    }
    trainer.run(|_, _| {})?;
    Ok(trainer.checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall_rays() -> Vec<Ray<f64>> {
        // sensor at the origin facing a wall at x = 4
        let mut rays = Vec::new();
        for i in 0..40 {
            for j in 0..20 {
                let y = -2.0 + 4.0 * i as f64 / 39.0;
                let z = -1.0 + 2.0 * j as f64 / 19.0;
                rays.push(Ray::between(Point3::zero(), Point3::new(4.0, y, z)).unwrap());
            }
        }
        rays
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_rays: 64,
            iterations: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_is_initialisation() {
        let rays = wall_rays();
        let t = Trainer::<f64>::new(&rays, small_cfg()).unwrap();
        let ckpt = t.checkpoint();
        let fresh = init_model::<f64>(&small_cfg(), t.model().grid.extent().cast()).unwrap();
        assert_eq!(ckpt, Checkpoint::from_model(&fresh, &small_cfg(), t.mask()));
        assert_eq!(ckpt.step, 0);
        assert_eq!(ckpt.feature_parameter_count(), 0);
    }

    #[test]
    fn range_filters_are_counted() {
        let mut rays = wall_rays();
        rays.push(Ray::between(Point3::zero(), Point3::new(0.1, 0.0, 0.0)).unwrap());
        rays.push(Ray::between(Point3::zero(), Point3::new(90.0, 0.0, 0.0)).unwrap());
        let t = Trainer::<f64>::new(&rays, small_cfg()).unwrap();
        assert_eq!(t.stats().degenerate_rays, 1);
        assert_eq!(t.stats().far_rays, 1);
        assert_eq!(t.rays().len(), 800);
    }

    #[test]
    fn training_is_deterministic() {
        let rays = wall_rays();
        let cfg = TrainConfig {
            iterations: 5,
            ..small_cfg()
        };
        let run = || {
            let mut t = Trainer::<f64>::new(&rays, cfg.clone()).unwrap();
            t.run(|_, _| {}).unwrap();
            t.checkpoint().to_bytes()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn feature_count_never_decreases() {
        let rays = wall_rays();
        let mut t = Trainer::<f64>::new(&rays, small_cfg()).unwrap();
        let mut last = 0;
        for _ in 0..10 {
            t.step().unwrap();
            let n = t.model().grid.entry_count();
            assert!(n >= last);
            last = n;
        }
        assert!(last > 0);
    }
}
