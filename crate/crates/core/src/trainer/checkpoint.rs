//! Binary checkpoint format (little-endian).
//!
//! ```text
//! magic            4 bytes  "3QFP"
//! version          u32      1
//! config block     26 scalars, see CONFIG_LAYOUT
//! extent           4 × f64  origin x, y, z, side
//! m                u32
//! frequencies      m × f64
//! 3H tables        u8 plane, u8 level, u64 count,
//!                  count × (u64 morton key, d × f32 feature)
//!                  ordered by (plane, level), keys ascending
//! layer count      u32
//! per layer        u32 rows, u32 cols, rows·cols × f64 weights, rows × f64 biases
//! step counter     u64
//! occupancy mask   "MASK", f64 cell side, u64 count, count × 3 × i32
//!                  (optional trailer, cells ascending)
//! ```
//!
//! Config block order, with storage type:
//!
//! ```text
//!  0 surface_samples u64   9 adam_beta2 f64      18 hidden_width u64
//!  1 free_samples u64     10 adam_eps f64        19 activation u64 (0 relu, 1 tanh)
//!  2 truncation f64       11 seed u64            20 leaf_resolution f64
//!  3 sigmoid_scale f64    12 levels u64          21 feature_init_std f64
//!  4 batch_rays u64       13 max_depth u64       22 free_space_start f64
//!  5 iterations u64       14 feature_dim u64     23 max_range f64
//!  6 lr_features f64      15 frequencies u64     24 mask_resolution f64
//!  7 lr_mlp f64           16 sigma2 f64          25 mask_dilation u64
//!  8 adam_beta1 f64       17 mlp_depth u64
//! ```

use std::path::Path;

use crate::decoder::{Activation, DenseLayer, MlpDecoder};
use crate::encoding::PositionalEncoder;
use crate::error::{Error, Result};
use crate::feature_grid::{FeaturePlaneSet, VertexKey};
use crate::geometry::{Extent, Plane, Point3};
use crate::meshing::OccupancyMask;
use crate::model::SdfModel;
use crate::scalar::Scalar;

use super::{stream_seed, TrainConfig, STREAM_ENCODER};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"3QFP";
pub const CHECKPOINT_VERSION: u32 = 1;
const MASK_MAGIC: [u8; 4] = *b"MASK";

#[derive(Clone, Debug, PartialEq)]
pub struct TableSnapshot {
    pub plane: Plane,
    pub level: u32,
    /// Ascending by key.
    pub entries: Vec<(u64, Vec<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSnapshot {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub extent_origin: [f64; 3],
    pub extent_side: f64,
    pub frequencies: Vec<f64>,
    pub tables: Vec<TableSnapshot>,
    pub layers: Vec<LayerSnapshot>,
    pub step: u64,
    pub mask: OccupancyMask,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &SdfModel<T>, cfg: &TrainConfig, mask: &OccupancyMask) -> Self {
        let extent = model.grid.extent();
        let tables = model
            .grid
            .tables()
            .iter()
            .map(|t| TableSnapshot {
                plane: t.plane(),
                level: t.level(),
                entries: t
                    .sorted_entries()
                    .into_iter()
                    .map(|(k, f)| (k.0, f.iter().map(|v| v.as_f64() as f32).collect()))
                    .collect(),
            })
            .collect();
        let layers = model
            .decoder
            .layers()
            .iter()
            .map(|l| LayerSnapshot {
                rows: l.rows,
                cols: l.cols,
                weights: l.weights.iter().map(|v| v.as_f64()).collect(),
                bias: l.bias.iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        Self {
            config: cfg.clone(),
            extent_origin: extent.origin.cast::<f64>().to_array(),
            extent_side: extent.side().as_f64(),
            frequencies: model.encoder.frequencies().iter().map(|v| v.as_f64()).collect(),
            tables,
            layers,
            step: model.decoder.step(),
            mask: mask.clone(),
        }
    }

    pub fn extent(&self) -> Result<Extent<f64>> {
        Extent::new(
            Point3::from_array(self.extent_origin),
            self.config.leaf_resolution,
            self.config.max_depth as u32,
        )
    }

    /// Rebuilds the model. Optimiser moments are not stored and restart at zero.
    pub fn to_model<T: Scalar>(&self) -> Result<SdfModel<T>> {
        let cfg = &self.config;
        let extent = self.extent()?;
        let mut grid = FeaturePlaneSet::<T>::new(extent.cast(), cfg.feature_dim as usize, cfg.levels as u32, cfg.feature_init_std)?;
        let mut scratch = vec![T::zero(); cfg.feature_dim as usize];
        for t in &self.tables {
            let table = grid.table_mut(t.plane, t.level);
            for (key, f) in &t.entries {
                for (s, v) in scratch.iter_mut().zip(f) {
                    *s = T::of(*v as f64);
                }
                table.insert(VertexKey(*key), &scratch);
            }
        }
        let encoder = PositionalEncoder::from_frequencies(
            self.frequencies.iter().map(|&v| T::of(v)).collect(),
            cfg.sigma2,
            stream_seed(cfg.seed, STREAM_ENCODER),
        )?;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                DenseLayer::from_parts(
                    l.rows,
                    l.cols,
                    l.weights.iter().map(|&v| T::of(v)).collect(),
                    l.bias.iter().map(|&v| T::of(v)).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = MlpDecoder::from_layers(layers, cfg.activation()?, self.step)?;
        SdfModel::new(grid, encoder, decoder)
    }

    pub fn feature_parameter_count(&self) -> usize {
        self.tables.iter().map(|t| t.entries.len()).sum::<usize>() * self.config.feature_dim as usize
    }

    pub fn mlp_parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        write_config(&mut w, &self.config);
        for v in self.extent_origin {
            w.f64(v);
        }
        w.f64(self.extent_side);
        w.u32(self.frequencies.len() as u32);
        self.frequencies.iter().for_each(|&v| w.f64(v));
        for t in &self.tables {
            w.u8(t.plane as u8);
            w.u8(t.level as u8);
            w.u64(t.entries.len() as u64);
            for (key, f) in &t.entries {
                w.u64(*key);
                f.iter().for_each(|&v| w.f32(v));
            }
        }
        w.u32(self.layers.len() as u32);
        for l in &self.layers {
            w.u32(l.rows as u32);
            w.u32(l.cols as u32);
            l.weights.iter().for_each(|&v| w.f64(v));
            l.bias.iter().for_each(|&v| w.f64(v));
        }
        w.u64(self.step);
        w.bytes(&MASK_MAGIC);
        w.f64(self.mask.resolution());
        let cells = self.mask.sorted_cells();
        w.u64(cells.len() as u64);
        for c in cells {
            c.iter().for_each(|&v| w.i32(v));
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::CorruptMagic { found: magic });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let config = read_config(&mut r)?;
        config.validate()?;
        let extent_origin = [r.f64("extent")?, r.f64("extent")?, r.f64("extent")?];
        let extent_side = r.f64("extent")?;
        let m = r.u32("frequency count")? as usize;
        let frequencies = (0..m).map(|_| r.f64("frequencies")).collect::<Result<Vec<_>>>()?;
        let d = config.feature_dim as usize;
        let n_tables = 3 * config.levels as usize;
        let min_level = (config.max_depth - config.levels + 1) as u32;
        let mut tables = Vec::with_capacity(n_tables);
        for i in 0..n_tables {
            let plane_id = r.u8("table plane")?;
            let plane = Plane::from_index(plane_id)
                .ok_or_else(|| Error::InvalidConfig(format!("table {i}: unknown plane id {plane_id}")))?;
            let level = r.u8("table level")? as u32;
            let expected = (Plane::ALL[i / config.levels as usize], min_level + (i % config.levels as usize) as u32);
            if (plane, level) != expected {
                return Err(Error::InvalidConfig(format!(
                    "table {i} is ({plane:?}, {level}), expected {expected:?}"
                )));
            }
            let count = r.u64("table entry count")?;
            let need = count.saturating_mul(8 + 4 * d as u64);
            if need > r.remaining() as u64 {
                return Err(r.truncated("table entries"));
            }
            let mut entries = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let key = r.u64("vertex key")?;
                let f = (0..d).map(|_| r.f32("feature")).collect::<Result<Vec<_>>>()?;
                entries.push((key, f));
            }
            tables.push(TableSnapshot { plane, level, entries });
        }
        let n_layers = r.u32("layer count")? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let rows = r.u32("layer rows")? as usize;
            let cols = r.u32("layer cols")? as usize;
            if (rows as u64 * cols as u64 + rows as u64) * 8 > r.remaining() as u64 {
                return Err(r.truncated("layer weights"));
            }
            let weights = (0..rows * cols).map(|_| r.f64("weights")).collect::<Result<Vec<_>>>()?;
            let bias = (0..rows).map(|_| r.f64("biases")).collect::<Result<Vec<_>>>()?;
            layers.push(LayerSnapshot { rows, cols, weights, bias });
        }
        let step = r.u64("step counter")?;
        let mask = if r.remaining() == 0 {
            OccupancyMask::new(config.mask_resolution)
        } else {
            let tag: [u8; 4] = r.take(4, "mask tag")?.try_into().unwrap();
            if tag != MASK_MAGIC {
                return Err(Error::CorruptMagic { found: tag });
            }
            let res = r.f64("mask resolution")?;
            if !(res > 0.0) {
                return Err(Error::InvalidConfig(format!("mask resolution {res} is not positive")));
            }
            let count = r.u64("mask cell count")?;
            if count.saturating_mul(12) > r.remaining() as u64 {
                return Err(r.truncated("mask cells"));
            }
            let mut cells = Vec::with_capacity(count as usize);
            for _ in 0..count {
                cells.push([r.i32("mask cell")?, r.i32("mask cell")?, r.i32("mask cell")?]);
            }
            OccupancyMask::from_cells(res, cells)
        };
        Ok(Self {
            config,
            extent_origin,
            extent_side,
            frequencies,
            tables,
            layers,
            step,
            mask,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(Error::file(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(Error::file(path))?;
    Checkpoint::from_bytes(&bytes)
}

fn write_config(w: &mut Writer, c: &TrainConfig) {
    let act = c.activation().map(Activation::code).unwrap_or(0);
    w.u64(c.surface_samples);
    w.u64(c.free_samples);
    w.f64(c.truncation);
    w.f64(c.sigmoid_scale);
    w.u64(c.batch_rays);
    w.u64(c.iterations);
    w.f64(c.lr_features);
    w.f64(c.lr_mlp);
    w.f64(c.adam_beta1);
    w.f64(c.adam_beta2);
    w.f64(c.adam_eps);
    w.u64(c.seed);
    w.u64(c.levels);
    w.u64(c.max_depth);
    w.u64(c.feature_dim);
    w.u64(c.frequencies);
    w.f64(c.sigma2);
    w.u64(c.mlp_depth);
    w.u64(c.hidden_width);
    w.u64(act);
    w.f64(c.leaf_resolution);
    w.f64(c.feature_init_std);
    w.f64(c.free_space_start);
    w.f64(c.max_range);
    w.f64(c.mask_resolution);
    w.u64(c.mask_dilation);
}

fn read_config(r: &mut Reader<'_>) -> Result<TrainConfig> {
    let ctx = "config block";
    let mut c = TrainConfig {
        surface_samples: r.u64(ctx)?,
        free_samples: r.u64(ctx)?,
        truncation: r.f64(ctx)?,
        sigmoid_scale: r.f64(ctx)?,
        batch_rays: r.u64(ctx)?,
        iterations: r.u64(ctx)?,
        lr_features: r.f64(ctx)?,
        lr_mlp: r.f64(ctx)?,
        adam_beta1: r.f64(ctx)?,
        adam_beta2: r.f64(ctx)?,
        adam_eps: r.f64(ctx)?,
        seed: r.u64(ctx)?,
        levels: r.u64(ctx)?,
        max_depth: r.u64(ctx)?,
        feature_dim: r.u64(ctx)?,
        frequencies: r.u64(ctx)?,
        sigma2: r.f64(ctx)?,
        mlp_depth: r.u64(ctx)?,
        hidden_width: r.u64(ctx)?,
        ..TrainConfig::default()
    };
    let act = r.u64(ctx)?;
    c.activation = Activation::from_code(act)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown activation code {act}")))?
        .to_string();
    c.leaf_resolution = r.f64(ctx)?;
    c.feature_init_std = r.f64(ctx)?;
    c.free_space_start = r.f64(ctx)?;
    c.max_range = r.f64(ctx)?;
    c.mask_resolution = r.f64(ctx)?;
    c.mask_dilation = r.u64(ctx)?;
    Ok(c)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn truncated(&self, context: &str) -> Error {
        Error::TruncatedFile {
            offset: self.pos as u64,
            context: context.to_string(),
        }
    }

    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.truncated(context));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, context: &str) -> Result<[u8; N]> {
        Ok(self.take(N, context)?.try_into().unwrap())
    }

    fn u8(&mut self, c: &str) -> Result<u8> {
        Ok(self.take(1, c)?[0])
    }
    fn u32(&mut self, c: &str) -> Result<u32> {
        self.array(c).map(u32::from_le_bytes)
    }
    fn u64(&mut self, c: &str) -> Result<u64> {
        self.array(c).map(u64::from_le_bytes)
    }
    fn i32(&mut self, c: &str) -> Result<i32> {
        self.array(c).map(i32::from_le_bytes)
    }
    fn f32(&mut self, c: &str) -> Result<f32> {
        self.array(c).map(f32::from_le_bytes)
    }
    fn f64(&mut self, c: &str) -> Result<f64> {
        self.array(c).map(f64::from_le_bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::init_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_checkpoint(seed: u64) -> Checkpoint {
        let cfg = TrainConfig {
            seed,
            feature_dim: 4,
            levels: 2,
            frequencies: 3,
            hidden_width: 8,
            ..TrainConfig::default()
        };
        let extent = Extent::new(Point3::new(-200.0, -200.0, -200.0), 0.1, 12).unwrap();
        let mut model = init_model::<f64>(&cfg, extent).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask = OccupancyMask::new(0.4);
        for _ in 0..50 {
            let p = Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..2.0));
            model.grid.allocate_for_point(p, &mut rng).unwrap();
            mask.insert_point(p);
        }
        Checkpoint::from_model(&model, &cfg, &mask)
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let ckpt = random_checkpoint(3);
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.feature_parameter_count(), ckpt.feature_parameter_count());
        // through the model as well
        let model = back.to_model::<f64>().unwrap();
        let again = Checkpoint::from_model(&model, &back.config, &back.mask);
        assert_eq!(again.to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = random_checkpoint(1).to_bytes();
        assert_eq!(&bytes[..4], b"3QFP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        // 26 config scalars, then the extent side
        let side = f64::from_le_bytes(bytes[8 + 26 * 8 + 24..8 + 26 * 8 + 32].try_into().unwrap());
        assert!((side - 409.6).abs() < 1e-9);
    }

    #[test]
    fn corrupt_inputs() {
        let mut bytes = random_checkpoint(2).to_bytes();
        let good = bytes.clone();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::CorruptMagic { .. })));
        let mut bytes = good.clone();
        bytes[4] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
        for cut in [3, 30, good.len() / 2, good.len() - 1] {
            assert!(
                matches!(Checkpoint::from_bytes(&good[..cut]), Err(Error::TruncatedFile { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn mask_trailer_is_optional() {
        let ckpt = random_checkpoint(4);
        let bytes = ckpt.to_bytes();
        let trailer = 4 + 8 + 8 + 12 * ckpt.mask.len();
        let back = Checkpoint::from_bytes(&bytes[..bytes.len() - trailer]).unwrap();
        assert!(back.mask.is_empty());
        assert_eq!(back.tables, ckpt.tables);
    }
}
