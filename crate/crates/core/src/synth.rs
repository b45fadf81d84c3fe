//! Synthetic lidar scenes built from analytic primitives.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::PointCloud;
use crate::geometry::{Point3, Pose};
use crate::io::{Frame, ScanSet};

/// Square slab whose top face is the plane `z = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundSpec {
    pub half_size: f64,
    #[serde(default = "default_thickness")]
    pub thickness: f64,
}

fn default_thickness() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Evenly spaced poses on a horizontal circle, heading along the tangent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleSpec {
    #[serde(default)]
    pub center: [f64; 2],
    pub radius: f64,
    pub height: f64,
    pub poses: usize,
}

/// Spinning-lidar pattern in the sensor frame (x forward, z up).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayPattern {
    pub azimuth: usize,
    pub elevation: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
}

impl Default for RayPattern {
    fn default() -> Self {
        Self {
            azimuth: 360,
            elevation: 16,
            elevation_min_deg: -35.0,
            elevation_max_deg: 0.0,
        }
    }
}

impl RayPattern {
    pub fn directions(&self) -> Vec<Point3<f64>> {
        let mut out = Vec::with_capacity(self.azimuth * self.elevation);
        for j in 0..self.elevation {
            let t = if self.elevation == 1 {
                0.0
            } else {
                j as f64 / (self.elevation - 1) as f64
            };
            let el = (self.elevation_min_deg + t * (self.elevation_max_deg - self.elevation_min_deg)).to_radians();
            for i in 0..self.azimuth {
                let az = 2.0 * PI * i as f64 / self.azimuth as f64;
                out.push(Point3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_range")]
    pub max_range: f64,
    /// Ground-truth sample spacing (m).
    #[serde(default = "default_gt_spacing")]
    pub gt_spacing: f64,
    #[serde(default)]
    pub ground: Option<GroundSpec>,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    #[serde(default)]
    pub spheres: Vec<SphereSpec>,
    #[serde(default)]
    pub circle: Option<CircleSpec>,
    /// Extra poses as row-major `[R | t]`.
    #[serde(default)]
    pub poses: Vec<[f64; 12]>,
    #[serde(default)]
    pub rays: RayPattern,
}

fn default_noise() -> f64 {
    0.01
}

fn default_range() -> f64 {
    60.0
}

fn default_gt_spacing() -> f64 {
    0.02
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::room()
    }
}

impl SceneSpec {
    /// 10 × 10 m floor, two boxes and a sphere, scanned from a 20-pose circle.
    pub fn room() -> Self {
        Self {
            seed: 0,
            noise_std: 0.01,
            max_range: 60.0,
            gt_spacing: 0.02,
            ground: Some(GroundSpec {
                half_size: 5.0,
                thickness: 0.2,
            }),
            boxes: vec![
                BoxSpec {
                    center: [1.5, 1.0, 0.5],
                    half_extents: [0.6, 0.4, 0.5],
                },
                BoxSpec {
                    center: [-1.5, -1.2, 0.75],
                    half_extents: [0.4, 0.8, 0.75],
                },
            ],
            spheres: vec![SphereSpec {
                center: [-1.0, 1.8, 0.4],
                radius: 0.6,
            }],
            circle: Some(CircleSpec {
                center: [0.0, 0.0],
                radius: 3.2,
                height: 1.8,
                poses: 20,
            }),
            poses: Vec::new(),
            rays: RayPattern::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("scene spec serialises")
    }

    pub fn primitives(&self) -> Vec<Primitive> {
        let mut out = Vec::new();
        if let Some(g) = &self.ground {
            out.push(Primitive::Ground {
                half_size: g.half_size,
                thickness: g.thickness,
            });
        }
        out.extend(self.boxes.iter().map(|b| Primitive::Box {
            center: Point3::from_array(b.center),
            half: Point3::from_array(b.half_extents),
        }));
        out.extend(self.spheres.iter().map(|s| Primitive::Sphere {
            center: Point3::from_array(s.center),
            radius: s.radius,
        }));
        out
    }

    pub fn trajectory(&self) -> Vec<Pose<f64>> {
        let mut out = Vec::new();
        if let Some(c) = &self.circle {
            for i in 0..c.poses {
                let a = 2.0 * PI * i as f64 / c.poses as f64;
                let t = Point3::new(c.center[0] + c.radius * a.cos(), c.center[1] + c.radius * a.sin(), c.height);
                out.push(Pose::from_yaw(a + PI / 2.0, t));
            }
        }
        out.extend(self.poses.iter().map(Pose::from_3x4));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.primitives().is_empty() {
            return bad("scene has no primitives".into());
        }
        if let Some(g) = &self.ground {
            if !(g.half_size > 0.0 && g.thickness > 0.0) {
                return bad("ground half_size and thickness must be positive".into());
            }
        }
        if self.boxes.iter().any(|b| b.half_extents.iter().any(|&h| !(h > 0.0))) {
            return bad("box half extents must be positive".into());
        }
        if self.spheres.iter().any(|s| !(s.radius > 0.0)) {
            return bad("sphere radius must be positive".into());
        }
        if !(self.noise_std >= 0.0) || !(self.max_range > 0.0) || !(self.gt_spacing > 0.0) {
            return bad("noise_std must be ≥ 0, max_range and gt_spacing > 0".into());
        }
        if self.rays.azimuth == 0 || self.rays.elevation == 0 {
            return bad("ray pattern needs at least one azimuth and one elevation".into());
        }
        let poses = self.trajectory();
        if poses.is_empty() {
            return bad("trajectory has no poses".into());
        }
        for (i, p) in poses.iter().enumerate() {
            if !p.is_rigid(1e-6) {
                return bad(format!("pose {i} is not a rigid transform"));
            }
            if self.sdf(p.translation) <= 0.0 {
                return bad(format!("pose {i} starts inside a primitive"));
            }
        }
        Ok(())
    }

    /// Composite SDF, the minimum over primitives.
    pub fn sdf(&self, p: Point3<f64>) -> f64 {
        composite_sdf(&self.primitives(), p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Ground { half_size: f64, thickness: f64 },
    Box { center: Point3<f64>, half: Point3<f64> },
    Sphere { center: Point3<f64>, radius: f64 },
}

fn box_sdf(p: Point3<f64>, center: Point3<f64>, half: Point3<f64>) -> f64 {
    let d = p - center;
    let q = Point3::new(d.x.abs() - half.x, d.y.abs() - half.y, d.z.abs() - half.z);
    let outside = q.max(Point3::zero()).norm();
    let inside = q.x.max(q.y).max(q.z).min(0.0);
    outside + inside
}

impl Primitive {
    pub fn sdf(&self, p: Point3<f64>) -> f64 {
        match *self {
            Primitive::Ground { half_size, thickness } => box_sdf(
                p,
                Point3::new(0.0, 0.0, -thickness / 2.0),
                Point3::new(half_size, half_size, thickness / 2.0),
            ),
            Primitive::Box { center, half } => box_sdf(p, center, half),
            Primitive::Sphere { center, radius } => (p - center).norm() - radius,
        }
    }

    /// Area of the surface that ground truth is sampled from.
    pub fn sampled_area(&self) -> f64 {
        match *self {
            Primitive::Ground { half_size, .. } => 4.0 * half_size * half_size,
            Primitive::Box { half, .. } => 8.0 * (half.x * half.y + half.y * half.z + half.x * half.z),
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
        }
    }

    /// Roughly uniform surface samples, one per `spacing²`. Only the top face
    /// of the ground counts as surface.
    pub fn surface_samples(&self, spacing: f64) -> Vec<Point3<f64>> {
        match *self {
            Primitive::Ground { half_size, .. } => {
                let s = 2.0 * half_size;
                face_grid(Point3::new(-half_size, -half_size, 0.0), Point3::new(s, 0.0, 0.0), Point3::new(0.0, s, 0.0), spacing)
            }
            Primitive::Box { center, half } => {
                let mut out = Vec::new();
                let lo = center - half;
                let size = half * 2.0;
                let ex = Point3::new(size.x, 0.0, 0.0);
                let ey = Point3::new(0.0, size.y, 0.0);
                let ez = Point3::new(0.0, 0.0, size.z);
                for (origin, u, v) in [
                    (lo, ex, ey),
                    (lo + ez, ex, ey),
                    (lo, ex, ez),
                    (lo + ey, ex, ez),
                    (lo, ey, ez),
                    (lo + ex, ey, ez),
                ] {
                    out.extend(face_grid(origin, u, v, spacing));
                }
                out
            }
            Primitive::Sphere { center, radius } => {
                let n = ((4.0 * PI * radius * radius) / (spacing * spacing)).round().max(1.0) as usize;
                let golden = PI * (3.0 - 5f64.sqrt());
                (0..n)
                    .map(|i| {
                        let z = 1.0 - (2 * i + 1) as f64 / n as f64;
                        let r = (1.0 - z * z).sqrt();
                        let phi = golden * i as f64;
                        center + Point3::new(r * phi.cos(), r * phi.sin(), z) * radius
                    })
                    .collect()
            }
        }
    }
}

/// Cell-centred samples on the parallelogram `origin + a·u + b·v`, `a, b ∈ [0, 1]`.
fn face_grid(origin: Point3<f64>, u: Point3<f64>, v: Point3<f64>, spacing: f64) -> Vec<Point3<f64>> {
    let nu = (u.norm() / spacing).round().max(1.0) as usize;
    let nv = (v.norm() / spacing).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            let a = (i as f64 + 0.5) / nu as f64;
            let b = (j as f64 + 0.5) / nv as f64;
            out.push(origin + u * a + v * b);
        }
    }
    out
}

pub fn composite_sdf(prims: &[Primitive], p: Point3<f64>) -> f64 {
    prims.iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min)
}

/// Sphere tracing: distance along `dir` to the first surface, or `None`
/// if nothing is hit within `max_range`.
pub fn cast_ray(prims: &[Primitive], origin: Point3<f64>, dir: Point3<f64>, max_range: f64) -> Option<f64> {
    let mut t = 0.0;
    for _ in 0..100_000 {
        let d = composite_sdf(prims, origin + dir * t);
        if d.abs() < 1e-4 {
            return Some(t);
        }
        t += d;
        if t > max_range {
            return None;
        }
    }
    None
}

/// Surface samples of every primitive, minus those buried in or touching
/// another primitive.
pub fn ground_truth(spec: &SceneSpec) -> PointCloud {
    let prims = spec.primitives();
    let mut points = Vec::new();
    for (i, p) in prims.iter().enumerate() {
        points.extend(
            p.surface_samples(spec.gt_spacing)
                .into_iter()
                .filter(|&q| prims.iter().enumerate().all(|(j, o)| j == i || o.sdf(q) >= 1e-6)),
        );
    }
    PointCloud::new(points)
}

/// Scans the scene from every trajectory pose and samples its ground truth.
/// Endpoints are stored in the sensor frame; misses are dropped.
pub fn synth_scene(spec: &SceneSpec) -> Result<(ScanSet, PointCloud)> {
    spec.validate()?;
    let prims = spec.primitives();
    let dirs = spec.rays.directions();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let frames = spec
        .trajectory()
        .into_par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut points = Vec::new();
            for &d in &dirs {
                let world_dir = pose.rotate(d);
                if let Some(t) = cast_ray(&prims, pose.translation, world_dir, spec.max_range) {
                    let t = if spec.noise_std > 0.0 { t + noise.sample(&mut rng) } else { t };
                    points.push(d * t);
                }
            }
            Frame { pose, points }
        })
        .collect();
    Ok((ScanSet { frames, stride: 1 }, ground_truth(spec)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn single_pose(prims_spec: SceneSpec, pose: Pose<f64>) -> SceneSpec {
        SceneSpec {
            circle: None,
            poses: vec![pose.to_3x4()],
            ..prims_spec
        }
    }

    fn empty() -> SceneSpec {
        SceneSpec {
            ground: None,
            boxes: vec![],
            spheres: vec![],
            ..SceneSpec::room()
        }
    }

    #[test]
    fn analytic_intersections() {
        let ground = SceneSpec {
            ground: Some(GroundSpec {
                half_size: 5.0,
                thickness: 0.2,
            }),
            ..empty()
        };
        let t = cast_ray(&ground.primitives(), Point3::new(0.0, 0.0, 1.0), Point3::new(0.0, 0.0, -1.0), 60.0).unwrap();
        assert!((t - 1.0).abs() < 1e-4);

        let sphere = SceneSpec {
            spheres: vec![SphereSpec {
                center: [0.0; 3],
                radius: 1.0,
            }],
            ..empty()
        };
        let t = cast_ray(&sphere.primitives(), Point3::new(3.0, 0.0, 0.0), Point3::new(-1.0, 0.0, 0.0), 60.0).unwrap();
        assert!((t - 2.0).abs() < 1e-4);
        assert!(cast_ray(&sphere.primitives(), Point3::new(3.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), 60.0).is_none());
    }

    #[test]
    fn downward_ray_hits_floor() {
        let spec = single_pose(
            SceneSpec {
                noise_std: 0.0,
                ground: Some(GroundSpec {
                    half_size: 5.0,
                    thickness: 0.2,
                }),
                rays: RayPattern {
                    azimuth: 1,
                    elevation: 1,
                    elevation_min_deg: -90.0,
                    elevation_max_deg: -90.0,
                },
                ..empty()
            },
            Pose::from_translation(Point3::new(0.0, 0.0, 1.0)),
        );
        let (scans, _) = synth_scene(&spec).unwrap();
        let f = &scans.frames[0];
        assert_eq!(f.points.len(), 1);
        let world = f.pose.transform_point(f.points[0]);
        assert!(world.norm() < 1e-4);
    }

    #[test]
    fn random_scenes_have_surface_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let spec = SceneSpec {
                noise_std: 0.0,
                boxes: (0..2)
                    .map(|_| BoxSpec {
                        center: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.2..1.0)],
                        half_extents: [rng.random_range(0.1..0.8), rng.random_range(0.1..0.8), rng.random_range(0.1..0.8)],
                    })
                    .collect(),
                spheres: vec![SphereSpec {
                    center: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..1.0)],
                    radius: rng.random_range(0.2..1.0),
                }],
                circle: Some(CircleSpec {
                    center: [0.0, 0.0],
                    radius: 6.0,
                    height: 2.5,
                    poses: 3,
                }),
                rays: RayPattern {
                    azimuth: 90,
                    elevation: 8,
                    ..RayPattern::default()
                },
                ..SceneSpec::room()
            };
            let (scans, _) = synth_scene(&spec).unwrap();
            assert!(scans.point_count() > 0);
            for f in &scans.frames {
                for &p in &f.points {
                    assert!(spec.sdf(f.pose.transform_point(p)).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec {
            rays: RayPattern {
                azimuth: 60,
                ..RayPattern::default()
            },
            ..SceneSpec::room()
        };
        let a = synth_scene(&spec).unwrap();
        assert_eq!(a, synth_scene(&spec).unwrap());
        let b = synth_scene(&SceneSpec { seed: 1, ..spec.clone() }).unwrap();
        assert_ne!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn ground_truth_density() {
        // separated primitives, so nothing is culled
        let spec = SceneSpec {
            boxes: vec![BoxSpec {
                center: [3.0, 0.0, 2.0],
                half_extents: [0.5, 0.3, 0.2],
            }],
            spheres: vec![SphereSpec {
                center: [-3.0, 0.0, 2.0],
                radius: 0.7,
            }],
            ..SceneSpec::room()
        };
        let gt = ground_truth(&spec);
        let area: f64 = spec.primitives().iter().map(Primitive::sampled_area).sum();
        let expected = area / (spec.gt_spacing * spec.gt_spacing);
        assert!((gt.len() as f64 / expected - 1.0).abs() < 0.01, "{} vs {expected}", gt.len());
        let prims = spec.primitives();
        for p in &gt.points {
            assert!(composite_sdf(&prims, *p).abs() < 1e-9);
        }
    }

    #[test]
    fn room_culls_contact_faces() {
        let spec = SceneSpec::room();
        let gt = ground_truth(&spec);
        let prims = spec.primitives();
        for p in &gt.points {
            // every kept point is on exactly one surface and outside the others
            let inside = prims.iter().filter(|o| o.sdf(*p) < -1e-9).count();
            assert_eq!(inside, 0);
        }
        assert!(gt.points.iter().all(|p| p.z >= -1e-9));
    }

    #[test]
    fn spec_text_round_trip() {
        let room = SceneSpec::room();
        assert_eq!(SceneSpec::parse(&room.to_text()).unwrap(), room);
        let minimal = "[[spheres]]\ncenter = [0.0, 0.0, 0.0]\nradius = 1.0\n\n[circle]\nradius = 3.0\nheight = 0.0\nposes = 4\n";
        let spec = SceneSpec::parse(minimal).unwrap();
        assert_eq!(spec.trajectory().len(), 4);
        assert!(matches!(SceneSpec::parse("wobble = 1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(SceneSpec::parse("[circle]\nradius = 3.0\nheight = 0.0\nposes = 4\n"), Err(Error::InvalidSpec(_))));
        let inside = "[[spheres]]\ncenter = [0.0, 0.0, 0.0]\nradius = 1.0\n[circle]\nradius = 0.5\nheight = 0.0\nposes = 2\n";
        assert!(matches!(SceneSpec::parse(inside), Err(Error::InvalidSpec(_))));
    }
}
