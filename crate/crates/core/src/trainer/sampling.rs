//! Per-ray training samples and their projected-distance labels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Point3, Ray};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    NearSurface,
    FreeSpace,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingSample<T = f64> {
    pub point: Point3<T>,
    pub sdf_label: T,
    pub kind: SampleKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingParams<T> {
    pub surface_samples: usize,
    pub free_samples: usize,
    pub truncation: T,
    pub free_space_start: T,
}

/// Signed distance along the ray, negative between sensor and endpoint,
/// clamped to `[−truncation, truncation]`.
#[inline]
pub fn sdf_label<T: Scalar>(t: T, depth: T, truncation: T) -> T {
    (t - depth).max(-truncation).min(truncation)
}

/// Appends `surface_samples` points drawn uniformly from `depth ± τ` and
/// `free_samples` points from `[free_space_start, depth − τ)`. The free-space
/// draw is skipped when that interval is empty.
pub fn sample_ray_into<T: Scalar, R: Rng + ?Sized>(
    ray: &Ray<T>,
    params: &SamplingParams<T>,
    rng: &mut R,
    out: &mut Vec<TrainingSample<T>>,
) -> Result<()> {
    let tau = params.truncation;
    if !(ray.depth > tau) {
        return Err(Error::DegenerateRay {
            depth: ray.depth.as_f64(),
            truncation: tau.as_f64(),
        });
    }
    let near_lo = ray.depth - tau;
    let span = tau + tau;
    for _ in 0..params.surface_samples {
        let t = near_lo + span * T::of(rng.random::<f64>());
        out.push(TrainingSample {
            point: ray.at(t),
            sdf_label: sdf_label(t, ray.depth, tau),
            kind: SampleKind::NearSurface,
        });
    }
    let free_hi = ray.depth - tau;
    if free_hi > params.free_space_start {
        let span = free_hi - params.free_space_start;
        for _ in 0..params.free_samples {
            let t = params.free_space_start + span * T::of(rng.random::<f64>());
            out.push(TrainingSample {
                point: ray.at(t),
                sdf_label: sdf_label(t, ray.depth, tau),
                kind: SampleKind::FreeSpace,
            });
        }
    }
    Ok(())
}

pub fn sample_ray<T: Scalar, R: Rng + ?Sized>(ray: &Ray<T>, params: &SamplingParams<T>, rng: &mut R) -> Result<Vec<TrainingSample<T>>> {
    let mut out = Vec::with_capacity(params.surface_samples + params.free_samples);
    sample_ray_into(ray, params, rng, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> SamplingParams<f64> {
        SamplingParams {
            surface_samples: 3,
            free_samples: 3,
            truncation: 0.3,
            free_space_start: 0.5,
        }
    }

    fn ray(depth: f64) -> Ray<f64> {
        Ray::between(Point3::new(0.0, 0.0, 1.0), Point3::new(depth, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn labels() {
        assert_eq!(sdf_label(5.0, 5.0, 0.3), 0.0);
        assert!((sdf_label(4.9f64, 5.0, 0.3) + 0.1).abs() < 1e-12);
        assert_eq!(sdf_label(10.0, 5.0, 0.3), 0.3);
        assert_eq!(sdf_label(1.0, 5.0, 0.3), -0.3);
    }

    #[test]
    fn six_samples_with_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let r = ray(rng.random_range(1.0..40.0));
            let s = sample_ray(&r, &params(), &mut rng).unwrap();
            assert_eq!(s.len(), 6);
            for smp in &s {
                let t = (smp.point - r.origin).norm();
                match smp.kind {
                    SampleKind::NearSurface => {
                        assert!((t - r.depth).abs() <= 0.3 + 1e-12);
                        assert!(smp.sdf_label.abs() <= 0.3);
                    }
                    SampleKind::FreeSpace => {
                        assert!(t >= 0.5 - 1e-12 && t <= r.depth - 0.3 + 1e-12);
                        assert_eq!(smp.sdf_label, -0.3);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = sample_ray(&ray(7.0), &params(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_ray(&ray(7.0), &params(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_and_short_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_ray(&ray(0.2), &params(), &mut rng),
            Err(Error::DegenerateRay { .. })
        ));
        // free interval [0.5, 0.4) is empty
        let s = sample_ray(&ray(0.7), &params(), &mut rng).unwrap();
        assert_eq!(s.len(), 3);
    }
}
