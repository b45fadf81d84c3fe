//! Accuracy and completion of a reconstructed mesh against a reference cloud.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::geometry::{distance, Point3};
use crate::meshing::TriangleMesh;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draws `n` points uniformly by area from the mesh surface.
pub fn sample_mesh_surface<R: Rng + ?Sized>(mesh: &TriangleMesh, n: usize, rng: &mut R) -> Result<PointCloud> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for i in 0..mesh.triangles.len() {
        total += mesh.triangle_area(i);
        cdf.push(total);
    }
    if !(total > 0.0) || n == 0 {
        return Err(Error::EmptyMesh);
    }
    let points = (0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            // zero-area triangles share their predecessor's cdf value and are skipped
            let i = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangle(i);
            let s = rng.random::<f64>().sqrt();
            let t = rng.random::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - t)) + c * (s * t)
        })
        .collect();
    Ok(PointCloud { points })
}

/// Uniform voxel hash over a frozen reference cloud.
pub struct NearestIndex<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    buckets: FxHashMap<[i64; 3], Vec<u32>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> NearestIndex<'a> {
    pub fn new(points: &'a [Point3<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyReference);
        }
        let (mut min, mut max) = (points[0], points[0]);
        for p in points {
            min = min.min(*p);
            max = max.max(*p);
        }
        let span = max - min;
        // aim for a few points per occupied cell on surface-like clouds
        let extent = span.x.max(span.y).max(span.z);
        let mut cell = extent / (points.len() as f64).sqrt().max(1.0) * 2.0;
        if !(cell > 0.0) || !cell.is_finite() {
            cell = 1.0;
        }
        let mut idx = Self {
            points,
            cell,
            buckets: FxHashMap::default(),
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
        };
        for (i, p) in points.iter().enumerate() {
            let c = idx.cell_of(*p);
            for a in 0..3 {
                idx.lo[a] = idx.lo[a].min(c[a]);
                idx.hi[a] = idx.hi[a].max(c[a]);
            }
            idx.buckets.entry(c).or_default().push(i as u32);
        }
        Ok(idx)
    }

    fn cell_of(&self, p: Point3<f64>) -> [i64; 3] {
        [
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        ]
    }

    fn scan(&self, c: [i64; 3], q: Point3<f64>, best: &mut f64) {
        if let Some(ids) = self.buckets.get(&c) {
            for &i in ids {
                let d = distance(q, self.points[i as usize]);
                if d < *best {
                    *best = d;
                }
            }
        }
    }

    /// Exact distance from `q` to the closest reference point.
    pub fn nearest_distance(&self, q: Point3<f64>) -> f64 {
        let c = self.cell_of(q);
        let mut best = f64::INFINITY;
        let mut r: i64 = 0;
        loop {
            let x0 = (c[0] - r).max(self.lo[0]);
            let x1 = (c[0] + r).min(self.hi[0]);
            let y0 = (c[1] - r).max(self.lo[1]);
            let y1 = (c[1] + r).min(self.hi[1]);
            let z0 = (c[2] - r).max(self.lo[2]);
            let z1 = (c[2] + r).min(self.hi[2]);
            for x in x0..=x1 {
                for y in y0..=y1 {
                    if (x - c[0]).abs() == r || (y - c[1]).abs() == r {
                        for z in z0..=z1 {
                            self.scan([x, y, z], q, &mut best);
                        }
                    } else {
                        for z in [c[2] - r, c[2] + r] {
                            if z >= z0 && z <= z1 {
                                self.scan([x, y, z], q, &mut best);
                            }
                        }
                    }
                }
            }
            // every point outside the scanned block is at least r cells away
            if best < r as f64 * self.cell * (1.0 - 1e-9) {
                break;
            }
            let covers = (0..3).all(|a| c[a] - r <= self.lo[a] && c[a] + r >= self.hi[a]);
            if covers {
                break;
            }
            r += 1;
        }
        best
    }
}

/// `d(q, reference)` for every query point.
pub fn nearest_distances(query: &PointCloud, reference: &PointCloud) -> Result<Vec<f64>> {
    let index = NearestIndex::new(&reference.points)?;
    Ok(query.points.par_iter().map(|&q| index.nearest_distance(q)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy_cm: f64,
    pub completion_cm: f64,
    pub accuracy_ratio_pct: f64,
    pub completion_ratio_pct: f64,
    pub threshold_m: f64,
    /// Points in the predicted cloud.
    pub sample_count: usize,
    /// Points in the reference cloud.
    pub reference_count: usize,
}

impl MetricsReport {
    /// `metric=value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "accuracy_cm={:.6}\ncompletion_cm={:.6}\naccuracy_ratio_pct={:.6}\ncompletion_ratio_pct={:.6}\nthreshold_m={:.6}\nsample_count={}\nreference_count={}\n",
            self.accuracy_cm,
            self.completion_cm,
            self.accuracy_ratio_pct,
            self.completion_ratio_pct,
            self.threshold_m,
            self.sample_count,
            self.reference_count
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("Comp. [cm]", format!("{:.3}", self.completion_cm)),
            ("Acc. [cm]", format!("{:.3}", self.accuracy_cm)),
            ("Comp. Ratio [%]", format!("{:.2}", self.completion_ratio_pct)),
            ("Acc. Ratio [%]", format!("{:.2}", self.accuracy_ratio_pct)),
            ("Threshold [m]", format!("{:.3}", self.threshold_m)),
            ("Samples", self.sample_count.to_string()),
            ("Reference points", self.reference_count.to_string()),
        ];
        let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let vw = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        for (k, v) in rows {
            writeln!(f, "{k:<w$}  {v:>vw$}")?;
        }
        Ok(())
    }
}

fn summarize(d: &[f64], threshold: f64) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let below = d.iter().filter(|&&v| v < threshold).count() as f64;
    (mean * 100.0, below / n * 100.0)
}

/// Accuracy (`predicted → reference`) and completion (`reference → predicted`).
pub fn compute_metrics(predicted: &PointCloud, reference: &PointCloud, threshold: f64) -> Result<MetricsReport> {
    if predicted.is_empty() || reference.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let acc = nearest_distances(predicted, reference)?;
    let comp = nearest_distances(reference, predicted)?;
    let (accuracy_cm, accuracy_ratio_pct) = summarize(&acc, threshold);
    let (completion_cm, completion_ratio_pct) = summarize(&comp, threshold);
    Ok(MetricsReport {
        accuracy_cm,
        completion_cm,
        accuracy_ratio_pct,
        completion_ratio_pct,
        threshold_m: threshold,
        sample_count: predicted.len(),
        reference_count: reference.len(),
    })
}

/// Samples `samples` points from `mesh` with a seeded generator and scores
/// them against `reference`.
pub fn evaluate_mesh(mesh: &TriangleMesh, reference: &PointCloud, threshold: f64, samples: usize, seed: u64) -> Result<MetricsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let predicted = sample_mesh_surface(mesh, samples, &mut rng)?;
    compute_metrics(&predicted, reference, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_force(q: &[Point3<f64>], r: &[Point3<f64>]) -> Vec<f64> {
        q.iter()
            .map(|&a| r.iter().map(|&b| distance(a, b)).fold(f64::INFINITY, f64::min))
            .collect()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * scale)
                .collect(),
        )
    }

    #[test]
    fn samples_stay_on_triangle() {
        let mesh = TriangleMesh {
            vertices: vec![Point3::new(0.0, 0.0, 1.0), Point3::new(2.0, 0.0, 1.0), Point3::new(0.0, 3.0, 1.0)],
            triangles: vec![[0, 1, 2]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pc = sample_mesh_surface(&mesh, 10_000, &mut rng).unwrap();
        for p in &pc.points {
            assert!((p.z - 1.0).abs() < 1e-9);
            assert!(p.x >= -1e-12 && p.y >= -1e-12 && p.x / 2.0 + p.y / 3.0 <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn area_weighting() {
        // areas 9:1 plus a zero-area sliver between them
        let mesh = TriangleMesh {
            vertices: vec![
                Point3::zero(),
                Point3::new(3.0, 0.0, 0.0),
                Point3::new(0.0, 3.0, 0.0),
                Point3::new(10.0, 0.0, 0.0),
                Point3::new(11.0, 0.0, 0.0),
                Point3::new(10.0, 1.0, 0.0),
                Point3::new(20.0, 0.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [6, 6, 6], [3, 4, 5], [0, 1, 3]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pc = sample_mesh_surface(&mesh, 100_000, &mut rng).unwrap();
        let big = pc.points.iter().filter(|p| p.x < 5.0).count() as f64;
        let small = pc.points.iter().filter(|p| p.x >= 9.0 && p.y > 0.0).count() as f64;
        assert_eq!(pc.points.iter().filter(|p| p.x == 20.0).count(), 0);
        assert_eq!(big + small, 100_000.0);
        assert!((big / 100_000.0 - 0.9).abs() < 0.02);
    }

    #[test]
    fn empty_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_mesh_surface(&TriangleMesh::default(), 5, &mut rng), Err(Error::EmptyMesh)));
        let pc = PointCloud::new(vec![Point3::zero()]);
        assert!(matches!(nearest_distances(&pc, &PointCloud::default()), Err(Error::EmptyReference)));
        assert!(matches!(compute_metrics(&PointCloud::default(), &pc, 0.1), Err(Error::EmptyCloud)));
    }

    #[test]
    fn two_point_minimum() {
        let q = PointCloud::new(vec![Point3::zero()]);
        let r = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 2.0, 0.0)]);
        assert_eq!(nearest_distances(&q, &r).unwrap(), vec![1.0]);
        assert!(nearest_distances(&r, &r).unwrap().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_cloud(&mut rng, 1000, 4.0);
        let b = random_cloud(&mut rng, 1000, 4.0);
        assert_eq!(nearest_distances(&a, &b).unwrap(), brute_force(&a.points, &b.points));
        // far queries and a single-cell reference
        let far = random_cloud(&mut rng, 50, 200.0);
        assert_eq!(nearest_distances(&far, &b).unwrap(), brute_force(&far.points, &b.points));
        let one = PointCloud::new(vec![Point3::new(1.0, 1.0, 1.0); 3]);
        assert_eq!(nearest_distances(&far, &one).unwrap(), brute_force(&far.points, &one.points));
    }

    #[test]
    fn single_pair_arithmetic() {
        let p = PointCloud::new(vec![Point3::zero()]);
        let g = PointCloud::new(vec![Point3::new(0.05, 0.0, 0.0)]);
        let m = compute_metrics(&p, &g, 0.1).unwrap();
        assert!((m.accuracy_cm - 5.0).abs() < 1e-12 && (m.completion_cm - 5.0).abs() < 1e-12);
        assert_eq!((m.accuracy_ratio_pct, m.completion_ratio_pct), (100.0, 100.0));
        let m = compute_metrics(&p, &g, 0.04).unwrap();
        assert_eq!((m.accuracy_ratio_pct, m.completion_ratio_pct), (0.0, 0.0));
        let same = compute_metrics(&g, &g, 0.1).unwrap();
        assert_eq!((same.accuracy_cm, same.completion_cm), (0.0, 0.0));
        assert_eq!((same.accuracy_ratio_pct, same.completion_ratio_pct), (100.0, 100.0));
    }

    #[test]
    fn report_formats() {
        let p = PointCloud::new(vec![Point3::zero()]);
        let g = PointCloud::new(vec![Point3::new(0.05, 0.0, 0.0)]);
        let m = compute_metrics(&p, &g, 0.1).unwrap();
        let kv = m.to_key_values();
        assert!(kv.contains("accuracy_cm=5.000000\n"));
        assert!(kv.contains("completion_ratio_pct=100.000000\n"));
        assert!(kv.lines().all(|l| l.split_once('=').is_some()));
        let table = m.to_string();
        let widths: Vec<usize> = table.lines().map(str::len).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn symmetry_monotonicity_rigid(seed: u64, na in 1usize..200, nb in 1usize..200, yaw in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(&mut rng, na, 2.0);
            let b = random_cloud(&mut rng, nb, 2.0);
            let ab = compute_metrics(&a, &b, 0.1).unwrap();
            let ba = compute_metrics(&b, &a, 0.1).unwrap();
            prop_assert_eq!(ab.accuracy_cm, ba.completion_cm);
            prop_assert_eq!(ab.accuracy_ratio_pct, ba.completion_ratio_pct);
            let wider = compute_metrics(&a, &b, 0.3).unwrap();
            prop_assert!(wider.accuracy_ratio_pct >= ab.accuracy_ratio_pct);
            prop_assert!(wider.completion_ratio_pct >= ab.completion_ratio_pct);
            prop_assert!((0.0..=100.0).contains(&ab.accuracy_ratio_pct));
            let pose = Pose::from_yaw(yaw, Point3::new(5.0, -3.0, 1.0));
            let move_all = |c: &PointCloud| PointCloud::new(c.points.iter().map(|&p| pose.transform_point(p)).collect());
            let moved = compute_metrics(&move_all(&a), &move_all(&b), 0.1).unwrap();
            prop_assert!((moved.accuracy_cm - ab.accuracy_cm).abs() < 1e-9 * 100.0);
            prop_assert!((moved.completion_cm - ab.completion_cm).abs() < 1e-9 * 100.0);
        }

        #[test]
        fn accelerated_equals_brute_force(seed: u64, nq in 1usize..300, nr in 1usize..300, scale in 0.01f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_cloud(&mut rng, nq, scale);
            let r = random_cloud(&mut rng, nr, scale);
            prop_assert_eq!(nearest_distances(&q, &r).unwrap(), brute_force(&q.points, &r.points));
        }
    }
}
