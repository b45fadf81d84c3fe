//! Coarse 3D occupancy of observed space, used to keep marching cubes away
//! from regions the network never saw.

use std::collections::BTreeSet;

use rustc_hash::FxHashSet;

use crate::geometry::{Point3, Ray};
use crate::scalar::Scalar;

pub type CellIndex = [i32; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyMask {
    resolution: f64,
    cells: FxHashSet<CellIndex>,
}

impl OccupancyMask {
    pub fn new(resolution: f64) -> Self {
        assert!(resolution > 0.0, "mask resolution must be positive");
        Self {
            resolution,
            cells: FxHashSet::default(),
        }
    }

    pub fn from_cells(resolution: f64, cells: impl IntoIterator<Item = CellIndex>) -> Self {
        let mut m = Self::new(resolution);
        m.cells.extend(cells);
        m
    }

    /// Cells crossed by the sampling support of each ray,
    /// `[min(start, depth − τ), depth + τ]`, dilated by `dilation` cells.
    pub fn from_rays<T: Scalar>(rays: &[Ray<T>], free_space_start: f64, truncation: f64, resolution: f64, dilation: u32) -> Self {
        let mut m = Self::new(resolution);
        for ray in rays {
            let o = ray.origin.cast::<f64>();
            let d = ray.direction.cast::<f64>();
            let depth = ray.depth.as_f64();
            let t0 = free_space_start.min(depth - truncation).max(0.0);
            let t1 = depth + truncation;
            m.insert_segment(o + d * t0, o + d * t1);
        }
        m.dilate(dilation)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn cell_of(&self, p: Point3<f64>) -> CellIndex {
        let r = self.resolution;
        [(p.x / r).floor() as i32, (p.y / r).floor() as i32, (p.z / r).floor() as i32]
    }

    pub fn insert_point(&mut self, p: Point3<f64>) {
        let c = self.cell_of(p);
        self.cells.insert(c);
    }

    pub fn insert_cell(&mut self, c: CellIndex) {
        self.cells.insert(c);
    }

    #[inline]
    pub fn contains_cell(&self, c: &CellIndex) -> bool {
        self.cells.contains(c)
    }

    #[inline]
    pub fn contains_point(&self, p: Point3<f64>) -> bool {
        self.cells.contains(&self.cell_of(p))
    }

    /// Marks every cell the segment `a → b` passes through (grid traversal).
    pub fn insert_segment(&mut self, a: Point3<f64>, b: Point3<f64>) {
        let r = self.resolution;
        let mut cell = self.cell_of(a);
        let end = self.cell_of(b);
        let dir = b - a;
        let mut step = [0i32; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for i in 0..3 {
            let di = dir.axis(i);
            if di > 0.0 {
                step[i] = 1;
                t_max[i] = ((cell[i] as f64 + 1.0) * r - a.axis(i)) / di;
                t_delta[i] = r / di;
            } else if di < 0.0 {
                step[i] = -1;
                t_max[i] = (cell[i] as f64 * r - a.axis(i)) / di;
                t_delta[i] = -r / di;
            }
        }
        let budget = (0..3).map(|i| (end[i] - cell[i]).unsigned_abs() as usize).sum::<usize>() + 1;
        self.cells.insert(cell);
        for _ in 0..budget {
            if cell == end {
                break;
            }
            let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[axis] > 1.0 {
                break;
            }
            cell[axis] += step[axis];
            t_max[axis] += t_delta[axis];
            self.cells.insert(cell);
        }
        self.cells.insert(end);
    }

    /// Adds every cell within Chebyshev distance `n` of an occupied cell.
    pub fn dilate(&self, n: u32) -> Self {
        if n == 0 {
            return self.clone();
        }
        let n = n as i32;
        let mut out = Self::new(self.resolution);
        for c in &self.cells {
            for dx in -n..=n {
                for dy in -n..=n {
                    for dz in -n..=n {
                        out.cells.insert([c[0] + dx, c[1] + dy, c[2] + dz]);
                    }
                }
            }
        }
        out
    }

    /// Cells in ascending lexicographic order.
    pub fn sorted_cells(&self) -> Vec<CellIndex> {
        let set: BTreeSet<_> = self.cells.iter().copied().collect();
        set.into_iter().collect()
    }

    /// Inclusive min/max cell indices, or `None` when empty.
    pub fn bounds(&self) -> Option<(CellIndex, CellIndex)> {
        let mut it = self.cells.iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for c in it {
            for i in 0..3 {
                lo[i] = lo[i].min(c[i]);
                hi[i] = hi[i].max(c[i]);
            }
        }
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_walk(a: Point3<f64>, b: Point3<f64>, r: f64) -> FxHashSet<CellIndex> {
        let m = OccupancyMask::new(r);
        let n = 20_000;
        (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                m.cell_of(a + (b - a) * t)
            })
            .collect()
    }

    #[test]
    fn traversal_covers_dense_walk() {
        let cases = [
            (Point3::new(0.05, 0.05, 0.05), Point3::new(3.93, -1.21, 0.77)),
            (Point3::new(-2.0, 1.3, 0.2), Point3::new(-2.0, 1.3, -4.1)),
            (Point3::new(1.0, 1.0, 1.0), Point3::new(1.0, 1.0, 1.0)),
        ];
        for (a, b) in cases {
            let mut m = OccupancyMask::new(0.4);
            m.insert_segment(a, b);
            let walk = dense_walk(a, b, 0.4);
            for c in &walk {
                assert!(m.contains_cell(c), "missing {c:?}");
            }
            // traversal visits only cells the segment touches, plus at most
            // a few corner-grazing neighbours
            assert!(m.len() <= walk.len() + 3);
        }
    }

    #[test]
    fn dilation_grows_single_cell_to_cube() {
        let mut m = OccupancyMask::new(0.4);
        m.insert_point(Point3::new(0.1, 0.1, 0.1));
        let d = m.dilate(1);
        assert_eq!(d.len(), 27);
        assert!(d.contains_cell(&[-1, -1, -1]) && d.contains_cell(&[1, 1, 1]));
        assert!(!d.contains_cell(&[2, 0, 0]));
        assert_eq!(d.bounds(), Some(([-1, -1, -1], [1, 1, 1])));
    }

    #[test]
    fn ray_support_contains_samples() {
        let ray = Ray::between(Point3::new(0.0, 0.0, 1.8), Point3::new(4.0, 1.0, 0.0)).unwrap();
        let m = OccupancyMask::from_rays(&[ray], 0.5, 0.3, 0.4, 0);
        for i in 0..=100 {
            let t = 0.5 + (ray.depth + 0.3 - 0.5) * i as f64 / 100.0;
            assert!(m.contains_point(ray.at(t)));
        }
    }
}
