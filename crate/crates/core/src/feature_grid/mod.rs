//! Tri-quadtree feature store.
//!
//! Each of the three axis planes keeps one hash table per stored quadtree
//! level, keyed by the Morton code of lattice vertices. A node exists iff its
//! four corner vertices do; there are no explicit tree pointers. A point's
//! feature at one level is the sum of the bilinear interpolations on the three
//! planes, and the per-level features are concatenated from the coarsest stored
//! level to the leaf level.

mod morton;

pub use morton::{morton_decode, morton_encode, VertexKey};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::geometry::{CellCoord, Extent, Plane, Point3, Square};
use crate::optim::Adam;
use crate::scalar::Scalar;

const NO_SLOT: u32 = u32::MAX;

/// Learnable vectors for one `(plane, level)` pair, stored structure-of-arrays.
#[derive(Clone, Debug)]
pub struct FeatureTable<T> {
    plane: Plane,
    level: u32,
    dim: usize,
    index: FxHashMap<VertexKey, u32>,
    keys: Vec<VertexKey>,
    features: Vec<T>,
    grads: Vec<T>,
    adam_m: Vec<T>,
    adam_v: Vec<T>,
    touched: Vec<u32>,
    is_touched: Vec<bool>,
}

impl<T: Scalar> FeatureTable<T> {
    fn new(plane: Plane, level: u32, dim: usize) -> Self {
        Self {
            plane,
            level,
            dim,
            index: FxHashMap::default(),
            keys: Vec::new(),
            features: Vec::new(),
            grads: Vec::new(),
            adam_m: Vec::new(),
            adam_v: Vec::new(),
            touched: Vec::new(),
            is_touched: Vec::new(),
        }
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    #[inline]
    pub fn slot_of(&self, key: VertexKey) -> Option<u32> {
        self.index.get(&key).copied()
    }

    pub fn key(&self, slot: u32) -> VertexKey {
        self.keys[slot as usize]
    }

    #[inline]
    pub fn feature(&self, slot: u32) -> &[T] {
        let s = slot as usize * self.dim;
        &self.features[s..s + self.dim]
    }

    pub fn feature_mut(&mut self, slot: u32) -> &mut [T] {
        let s = slot as usize * self.dim;
        &mut self.features[s..s + self.dim]
    }

    pub fn grad(&self, slot: u32) -> &[T] {
        let s = slot as usize * self.dim;
        &self.grads[s..s + self.dim]
    }

    pub fn get(&self, key: VertexKey) -> Option<&[T]> {
        self.slot_of(key).map(|s| self.feature(s))
    }

    /// Inserts `feature` under `key` unless the key already exists; returns the slot.
    pub fn insert(&mut self, key: VertexKey, feature: &[T]) -> u32 {
        debug_assert_eq!(feature.len(), self.dim);
        if let Some(slot) = self.slot_of(key) {
            return slot;
        }
        let slot = self.keys.len() as u32;
        self.index.insert(key, slot);
        self.keys.push(key);
        self.features.extend_from_slice(feature);
        self.grads.extend(std::iter::repeat_n(T::zero(), self.dim));
        self.adam_m.extend(std::iter::repeat_n(T::zero(), self.dim));
        self.adam_v.extend(std::iter::repeat_n(T::zero(), self.dim));
        self.is_touched.push(false);
        slot
    }

    /// Entries in ascending key order.
    pub fn sorted_entries(&self) -> Vec<(VertexKey, &[T])> {
        let mut slots: Vec<u32> = (0..self.keys.len() as u32).collect();
        slots.sort_unstable_by_key(|&s| self.keys[s as usize]);
        slots.into_iter().map(|s| (self.keys[s as usize], self.feature(s))).collect()
    }

    fn add_grad(&mut self, slot: u32, weight: T, g: &[T]) {
        let s = slot as usize * self.dim;
        for (dst, &gi) in self.grads[s..s + self.dim].iter_mut().zip(g) {
            *dst += weight * gi;
        }
        if !self.is_touched[slot as usize] {
            self.is_touched[slot as usize] = true;
            self.touched.push(slot);
        }
    }

    fn adam_step(&mut self, adam: &Adam<T>, step: u64) {
        let d = self.dim;
        // ascending slot order keeps the update independent of touch order
        self.touched.sort_unstable();
        for &slot in &self.touched {
            let s = slot as usize * d;
            let r = s..s + d;
            adam.update(
                step,
                &mut self.features[r.clone()],
                &self.grads[r.clone()],
                &mut self.adam_m[r.clone()],
                &mut self.adam_v[r.clone()],
            );
            self.grads[r].iter_mut().for_each(|g| *g = T::zero());
            self.is_touched[slot as usize] = false;
        }
        self.touched.clear();
    }

    fn zero_grad(&mut self) {
        for &slot in &self.touched {
            let s = slot as usize * self.dim;
            self.grads[s..s + self.dim].iter_mut().for_each(|g| *g = T::zero());
            self.is_touched[slot as usize] = false;
        }
        self.touched.clear();
    }
}

/// One bilinear corner: lattice key, weight, and the slot it resolved to at
/// query time (if allocated).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corner<T> {
    pub key: VertexKey,
    pub weight: T,
    slot: u32,
}

impl<T> Corner<T> {
    pub fn slot(&self) -> Option<u32> {
        (self.slot != NO_SLOT).then_some(self.slot)
    }
}

/// Corners and weights for every table touched by one point query, in table order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InterpRecord<T> {
    pub corners: Vec<[Corner<T>; 4]>,
}

/// Corner offsets in the order `v00, v10, v01, v11`.
const CORNER_OFFSETS: [(u32, u32); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

#[inline]
fn bilinear_weights<T: Scalar>(c: &CellCoord<T>) -> [T; 4] {
    let one = T::one();
    [(one - c.u) * (one - c.v), c.u * (one - c.v), (one - c.u) * c.v, c.u * c.v]
}

/// The three planar quadtrees restricted to their deepest `levels` levels.
#[derive(Clone, Debug)]
pub struct FeaturePlaneSet<T = f64> {
    extent: Extent<T>,
    squares: [Square<T>; 3],
    dim: usize,
    levels: u32,
    init_std: f64,
    /// Plane-major: table `plane * levels + (level - min_level)`.
    tables: Vec<FeatureTable<T>>,
}

impl<T: Scalar> FeaturePlaneSet<T> {
    pub fn new(extent: Extent<T>, dim: usize, levels: u32, init_std: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be at least 1".into()));
        }
        if levels == 0 || levels > extent.max_depth {
            return Err(Error::InvalidConfig(format!(
                "stored levels {levels} must be in 1..={}",
                extent.max_depth
            )));
        }
        if !(init_std >= 0.0) || !init_std.is_finite() {
            return Err(Error::InvalidConfig(format!("feature init std {init_std} is invalid")));
        }
        let min_level = extent.max_depth - levels + 1;
        let tables = Plane::ALL
            .iter()
            .flat_map(|&plane| (min_level..=extent.max_depth).map(move |l| FeatureTable::new(plane, l, dim)))
            .collect();
        Ok(Self {
            extent,
            squares: Plane::ALL.map(|p| extent.square(p)),
            dim,
            levels,
            init_std,
            tables,
        })
    }

    pub fn extent(&self) -> &Extent<T> {
        &self.extent
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn min_level(&self) -> u32 {
        self.extent.max_depth - self.levels + 1
    }

    /// Length of the concatenated point feature, `d · H`.
    pub fn output_dim(&self) -> usize {
        self.dim * self.levels as usize
    }

    pub fn tables(&self) -> &[FeatureTable<T>] {
        &self.tables
    }

    pub fn table_index(&self, plane: Plane, level: u32) -> usize {
        plane.index() * self.levels as usize + (level - self.min_level()) as usize
    }

    pub fn table(&self, plane: Plane, level: u32) -> &FeatureTable<T> {
        &self.tables[self.table_index(plane, level)]
    }

    pub fn table_mut(&mut self, plane: Plane, level: u32) -> &mut FeatureTable<T> {
        let i = self.table_index(plane, level);
        &mut self.tables[i]
    }

    pub fn entry_count(&self) -> usize {
        self.tables.iter().map(FeatureTable::len).sum()
    }

    /// Number of learnable feature scalars: stored vertices × `d`.
    pub fn parameter_count(&self) -> usize {
        self.entry_count() * self.dim
    }

    #[inline]
    fn locate(&self, plane: Plane, level: u32, q: [T; 2]) -> Option<CellCoord<T>> {
        self.squares[plane.index()].locate_cell(level, q)
    }

    /// Creates the four corner vertices of the containing cell on every plane
    /// and stored level. Existing vertices are left untouched. Returns the
    /// number of vertices created.
    pub fn allocate_for_point<R: Rng + ?Sized>(&mut self, p: Point3<T>, rng: &mut R) -> Result<usize> {
        if !self.extent.contains(p) {
            return Err(Extent::out_of_extent(p));
        }
        let normal = Normal::new(0.0, self.init_std).expect("validated std");
        let mut created = 0;
        let mut scratch = vec![T::zero(); self.dim];
        let min_level = self.min_level();
        for plane in Plane::ALL {
            let q = plane.project(p);
            for level in min_level..=self.extent.max_depth {
                let cell = self.locate(plane, level, q).ok_or_else(|| Extent::out_of_extent(p))?;
                let ti = self.table_index(plane, level);
                let table = &mut self.tables[ti];
                for (dx, dy) in CORNER_OFFSETS {
                    let key = VertexKey::encode(cell.ix + dx, cell.iy + dy);
                    if table.slot_of(key).is_none() {
                        for s in scratch.iter_mut() {
                            *s = T::of(normal.sample(rng));
                        }
                        table.insert(key, &scratch);
                        created += 1;
                    }
                }
            }
        }
        Ok(created)
    }

    /// Bilinear feature of a 2D point on one plane at one level. Missing
    /// vertices contribute zero and are reported with no slot.
    pub fn query_level_feature(&self, plane: Plane, level: u32, q: [T; 2]) -> Result<(Vec<T>, [Corner<T>; 4])> {
        if level < self.min_level() || level > self.extent.max_depth {
            return Err(Error::InvalidConfig(format!("level {level} is not stored")));
        }
        let cell = self.locate(plane, level, q).ok_or(Error::OutOfExtent {
            x: q[0].as_f64(),
            y: q[1].as_f64(),
            z: f64::NAN,
        })?;
        let mut out = vec![T::zero(); self.dim];
        let corners = self.interpolate_into(self.table_index(plane, level), &cell, &mut out);
        Ok((out, corners))
    }

    #[inline]
    fn interpolate_into(&self, table_index: usize, cell: &CellCoord<T>, out: &mut [T]) -> [Corner<T>; 4] {
        let table = &self.tables[table_index];
        let weights = bilinear_weights(cell);
        let mut corners = [Corner {
            key: VertexKey(0),
            weight: T::zero(),
            slot: NO_SLOT,
        }; 4];
        for (k, (dx, dy)) in CORNER_OFFSETS.into_iter().enumerate() {
            let key = VertexKey::encode(cell.ix + dx, cell.iy + dy);
            let w = weights[k];
            let slot = table.slot_of(key);
            if let Some(s) = slot {
                for (o, &f) in out.iter_mut().zip(table.feature(s)) {
                    *o += w * f;
                }
            }
            corners[k] = Corner {
                key,
                weight: w,
                slot: slot.unwrap_or(NO_SLOT),
            };
        }
        corners
    }

    /// Writes `V(p)` into `out` (length `d·H`) and, if given, the
    /// interpolation record needed to route gradients back.
    pub fn query_point_feature_into(
        &self,
        p: Point3<T>,
        out: &mut [T],
        mut record: Option<&mut InterpRecord<T>>,
    ) -> Result<()> {
        if out.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: out.len(),
            });
        }
        out.iter_mut().for_each(|v| *v = T::zero());
        if let Some(rec) = record.as_deref_mut() {
            rec.corners.clear();
            rec.corners.resize(self.tables.len(), [Corner { key: VertexKey(0), weight: T::zero(), slot: NO_SLOT }; 4]);
        }
        let min_level = self.min_level();
        for plane in Plane::ALL {
            let q = plane.project(p);
            for level in min_level..=self.extent.max_depth {
                let cell = self.locate(plane, level, q).ok_or_else(|| Extent::out_of_extent(p))?;
                let li = (level - min_level) as usize;
                let ti = plane.index() * self.levels as usize + li;
                let slice = &mut out[li * self.dim..(li + 1) * self.dim];
                let corners = self.interpolate_into(ti, &cell, slice);
                if let Some(rec) = record.as_deref_mut() {
                    rec.corners[ti] = corners;
                }
            }
        }
        Ok(())
    }

    pub fn query_point_feature(&self, p: Point3<T>) -> Result<(Vec<T>, InterpRecord<T>)> {
        let mut out = vec![T::zero(); self.output_dim()];
        let mut rec = InterpRecord::default();
        self.query_point_feature_into(p, &mut out, Some(&mut rec))?;
        Ok((out, rec))
    }

    /// Backward pass of [`Self::query_point_feature`]: every corner of every
    /// plane at level `ℓ` receives `weight · dL/dV[ℓ-slice]`.
    pub fn accumulate_gradient(&mut self, record: &InterpRecord<T>, dl_dv: &[T]) -> Result<()> {
        if dl_dv.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: dl_dv.len(),
            });
        }
        if record.corners.len() != self.tables.len() {
            return Err(Error::DimensionMismatch {
                expected: self.tables.len(),
                got: record.corners.len(),
            });
        }
        let levels = self.levels as usize;
        let d = self.dim;
        for (ti, corners) in record.corners.iter().enumerate() {
            let li = ti % levels;
            let g = &dl_dv[li * d..(li + 1) * d];
            if g.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let table = &mut self.tables[ti];
            for c in corners {
                let slot = match c.slot() {
                    Some(s) => s,
                    None => table.slot_of(c.key).ok_or(Error::UnknownVertex { table: ti, key: c.key.0 })?,
                };
                table.add_grad(slot, c.weight, g);
            }
        }
        Ok(())
    }

    /// Sparse Adam step over every vertex that received gradient since the
    /// last step; their gradient buffers are cleared afterwards.
    pub fn adam_step(&mut self, adam: &Adam<T>, step: u64) {
        for t in &mut self.tables {
            t.adam_step(adam, step);
        }
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tables {
            t.zero_grad();
        }
    }

    /// Total number of vertices with pending gradient.
    pub fn touched_count(&self) -> usize {
        self.tables.iter().map(|t| t.touched.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(dim: usize, levels: u32) -> FeaturePlaneSet<f64> {
        let extent = Extent::new(Point3::new(-10.0, -10.0, -10.0), 0.1, 8).unwrap();
        FeaturePlaneSet::new(extent, dim, levels, 0.01).unwrap()
    }

    #[test]
    fn allocation_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut fps = store(8, 3);
        assert_eq!(fps.parameter_count(), 0);
        let p = Point3::new(0.33, -1.27, 2.05);
        assert_eq!(fps.allocate_for_point(p, &mut rng).unwrap(), 36);
        assert_eq!(fps.entry_count(), 36);
        assert_eq!(fps.parameter_count(), 288);
        assert_eq!(fps.allocate_for_point(p, &mut rng).unwrap(), 0);
        // same leaf cell on every plane
        fps.allocate_for_point(Point3::new(0.36, -1.23, 2.01), &mut rng).unwrap();
        assert_eq!(fps.entry_count(), 36);
    }

    #[test]
    fn allocation_rejects_out_of_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut fps = store(2, 2);
        let err = fps.allocate_for_point(Point3::new(100.0, 0.0, 0.0), &mut rng);
        assert!(matches!(err, Err(Error::OutOfExtent { .. })));
        assert_eq!(fps.entry_count(), 0);
    }

    #[test]
    fn bilinear_hand_value() {
        let mut fps = store(1, 1);
        let level = fps.min_level();
        let cell = fps.extent().cell_size(level);
        let table = fps.table_mut(Plane::XY, level);
        // cell (100, 100) of the XY plane at the leaf level
        for ((dx, dy), val) in CORNER_OFFSETS.into_iter().zip([0.0, 4.0, 8.0, 12.0]) {
            table.insert(VertexKey::encode(100 + dx, 100 + dy), &[val]);
        }
        let q = [-10.0 + (100.0 + 0.25) * cell, -10.0 + (100.0 + 0.75) * cell];
        let (f, corners) = fps.query_level_feature(Plane::XY, level, q).unwrap();
        assert!((f[0] - 7.0).abs() < 1e-12);
        let wsum: f64 = corners.iter().map(|c| c.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-12);

        let q0 = [-10.0 + 100.0 * cell, -10.0 + 100.0 * cell];
        let (f, _) = fps.query_level_feature(Plane::XY, level, q0).unwrap();
        assert_eq!(f[0], 0.0);
    }

    #[test]
    fn constant_plane_level_isolated() {
        let mut fps = store(3, 2);
        let p = Point3::new(1.234, 0.77, -2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        fps.allocate_for_point(p, &mut rng).unwrap();
        for t in &mut fps.tables {
            for s in 0..t.len() as u32 {
                t.feature_mut(s).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let top = fps.extent().max_depth;
        let c = [0.5, -1.5, 2.0];
        let t = fps.table_mut(Plane::XZ, top);
        for s in 0..t.len() as u32 {
            t.feature_mut(s).copy_from_slice(&c);
        }
        let (v, _) = fps.query_point_feature(p).unwrap();
        assert_eq!(&v[..3], &[0.0; 3]);
        for (a, b) in v[3..].iter().zip(c) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_store_reads_zero() {
        let fps = store(4, 3);
        let (v, rec) = fps.query_point_feature(Point3::new(0.1, 0.2, 0.3)).unwrap();
        assert_eq!(v, vec![0.0; 12]);
        assert!(rec.corners.iter().flatten().all(|c| c.slot().is_none()));
    }

    #[test]
    fn gradient_routing_corner_weights() {
        let mut fps = store(2, 1);
        let level = fps.min_level();
        let cell = fps.extent().cell_size(level);
        let p = Point3::new(-10.0 + 40.0 * cell, -10.0 + 50.0 * cell, -10.0 + 60.0 * cell);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        fps.allocate_for_point(p, &mut rng).unwrap();
        let (_, rec) = fps.query_point_feature(p).unwrap();
        fps.accumulate_gradient(&rec, &[0.0, 0.0]).unwrap();
        assert_eq!(fps.touched_count(), 0);
        fps.accumulate_gradient(&rec, &[1.5, -2.0]).unwrap();
        for plane in Plane::ALL {
            let t = fps.table(plane, level);
            let (ix, iy) = match plane {
                Plane::XY => (40, 50),
                Plane::XZ => (40, 60),
                Plane::YZ => (50, 60),
            };
            let v00 = t.slot_of(VertexKey::encode(ix, iy)).unwrap();
            assert_eq!(t.grad(v00), &[1.5, -2.0]);
            let v11 = t.slot_of(VertexKey::encode(ix + 1, iy + 1)).unwrap();
            assert_eq!(t.grad(v11), &[0.0, 0.0]);
        }
    }

    #[test]
    fn unknown_vertex_is_reported() {
        let mut fps = store(1, 1);
        let (_, rec) = fps.query_point_feature(Point3::new(0.0, 0.0, 0.0)).unwrap();
        let err = fps.accumulate_gradient(&rec, &[1.0]).unwrap_err();
        assert!(matches!(err, Error::UnknownVertex { .. }));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut fps = store(3, 3);
            let p = Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            fps.allocate_for_point(p, &mut rng).unwrap();
            let a: Vec<f64> = (0..fps.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, rec) = fps.query_point_feature(p).unwrap();
            fps.accumulate_gradient(&rec, &a).unwrap();
            let objective = |fps: &FeaturePlaneSet<f64>| -> f64 {
                let (v, _) = fps.query_point_feature(p).unwrap();
                v.iter().zip(&a).map(|(x, y)| x * y).sum()
            };
            let h = 1e-5;
            for ti in 0..fps.tables.len() {
                for slot in 0..fps.tables[ti].len() as u32 {
                    for k in 0..3 {
                        let orig = fps.tables[ti].feature(slot)[k];
                        fps.tables[ti].feature_mut(slot)[k] = orig + h;
                        let up = objective(&fps);
                        fps.tables[ti].feature_mut(slot)[k] = orig - h;
                        let down = objective(&fps);
                        fps.tables[ti].feature_mut(slot)[k] = orig;
                        let fd = (up - down) / (2.0 * h);
                        let an = fps.tables[ti].grad(slot)[k];
                        assert!((fd - an).abs() <= 1e-8, "fd {fd} vs analytic {an}");
                    }
                }
            }
        }
    }

    #[test]
    fn adam_step_updates_only_touched() {
        let mut fps = store(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Point3::new(0.05, 0.05, 0.05);
        fps.allocate_for_point(p, &mut rng).unwrap();
        fps.allocate_for_point(Point3::new(3.0, 3.0, 3.0), &mut rng).unwrap();
        let before: Vec<Vec<f64>> = fps.tables.iter().map(|t| t.features.clone()).collect();
        let (_, rec) = fps.query_point_feature(p).unwrap();
        fps.accumulate_gradient(&rec, &[1.0]).unwrap();
        let touched = fps.touched_count();
        assert_eq!(touched, 12);
        fps.adam_step(&Adam::new(1e-2, 0.9, 0.999, 1e-8), 1);
        assert_eq!(fps.touched_count(), 0);
        let changed: usize = fps
            .tables
            .iter()
            .zip(&before)
            .map(|(t, b)| t.features.iter().zip(b).filter(|(x, y)| x != y).count())
            .sum();
        // p sits mid-cell on every plane, so all four corner weights are nonzero
        assert_eq!(changed, 12);
    }
}
