//! Points, rigid transforms, rays, and the mapped cube with its three planar
//! projections.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point3<T = f64> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Point3<T> {
    #[inline]
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Scalar>(self) -> Point3<U> {
        Point3::new(U::of(self.x.as_f64()), U::of(self.y.as_f64()), U::of(self.z.as_f64()))
    }

    pub fn min(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    #[inline]
    pub fn axis(self, i: usize) -> T {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

/// Euclidean distance. Every nearest-neighbour routine goes through this one
/// function so that accelerated and brute-force searches agree bit for bit.
#[inline]
pub fn distance<T: Scalar>(a: Point3<T>, b: Point3<T>) -> T {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

impl<T: Scalar> Add for Point3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Point3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Mul<T> for Point3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Scalar> Neg for Point3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<T = f64> {
    /// Row-major rotation.
    pub rotation: [[T; 3]; 3],
    pub translation: Point3<T>,
}

impl<T: Scalar> Pose<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            translation: Point3::zero(),
        }
    }

    pub fn from_translation(t: Point3<T>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation by `angle` radians about +z, followed by translation `t`.
    pub fn from_yaw(angle: T, t: Point3<T>) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[c, -s, z], [s, c, z], [z, z, o]],
            translation: t,
        }
    }

    /// Builds a pose from a row-major 3×4 `[R|t]` matrix.
    pub fn from_3x4(m: &[T; 12]) -> Self {
        Self {
            rotation: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            translation: Point3::new(m[3], m[7], m[11]),
        }
    }

    pub fn to_3x4(&self) -> [T; 12] {
        let r = &self.rotation;
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t.x, r[1][0], r[1][1], r[1][2], t.y, r[2][0], r[2][1], r[2][2], t.z,
        ]
    }

    #[inline]
    pub fn rotate(&self, p: Point3<T>) -> Point3<T> {
        let r = &self.rotation;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z,
        )
    }

    #[inline]
    pub fn transform_point(&self, p: Point3<T>) -> Point3<T> {
        self.rotate(p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let inv = Self {
            rotation: rt,
            translation: Point3::zero(),
        };
        Self {
            rotation: rt,
            translation: -inv.rotate(self.translation),
        }
    }

    pub fn determinant(&self) -> T {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> T {
        let r = &self.rotation;
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = T::zero();
                for k in 0..3 {
                    dot += r[k][i] * r[k][j];
                }
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn is_rigid(&self, tol: T) -> bool {
        self.orthonormality_error() <= tol && (self.determinant() - T::one()).abs() <= tol
    }

    /// Gram-Schmidt on the rotation rows; the third row is rebuilt as the
    /// cross product so the result is a proper rotation.
    pub fn orthonormalized(&self) -> Self {
        let r = &self.rotation;
        let a = Point3::from_array(r[0]).normalized();
        let b = Point3::from_array(r[1]);
        let b = (b - a * a.dot(b)).normalized();
        let c = a.cross(b);
        Self {
            rotation: [a.to_array(), b.to_array(), c.to_array()],
            translation: self.translation,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Pose<U> {
        let r = self.rotation.map(|row| row.map(|v| U::of(v.as_f64())));
        Pose {
            rotation: r,
            translation: self.translation.cast(),
        }
    }
}

/// A range measurement: sensor origin, unit direction, and range to the return.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T = f64> {
    pub origin: Point3<T>,
    pub direction: Point3<T>,
    pub depth: T,
}

impl<T: Scalar> Ray<T> {
    /// `None` when the endpoint coincides with the origin.
    pub fn between(origin: Point3<T>, endpoint: Point3<T>) -> Option<Self> {
        let d = endpoint - origin;
        let depth = d.norm();
        if !(depth > T::zero()) || !depth.is_finite() {
            return None;
        }
        Some(Self {
            origin,
            direction: d * (T::one() / depth),
            depth,
        })
    }

    #[inline]
    pub fn at(&self, t: T) -> Point3<T> {
        self.origin + self.direction * t
    }

    pub fn endpoint(&self) -> Point3<T> {
        self.at(self.depth)
    }
}

/// One of the three axis-aligned feature planes. The discriminant is the
/// on-disk plane id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Plane {
    XY = 0,
    XZ = 1,
    YZ = 2,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::XY, Plane::XZ, Plane::YZ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(Plane::XY),
            1 => Some(Plane::XZ),
            2 => Some(Plane::YZ),
            _ => None,
        }
    }

    /// Drops the axis orthogonal to the plane.
    #[inline]
    pub fn project<T: Scalar>(self, p: Point3<T>) -> [T; 2] {
        match self {
            Plane::XY => [p.x, p.y],
            Plane::XZ => [p.x, p.z],
            Plane::YZ => [p.y, p.z],
        }
    }
}

/// Projections of `p` onto the XY, XZ and YZ planes, in that order.
pub fn project_to_planes<T: Scalar>(p: Point3<T>) -> [[T; 2]; 3] {
    Plane::ALL.map(|plane| plane.project(p))
}

/// Integer cell and fractional offset of a 2D point at one quadtree level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellCoord<T> {
    pub ix: u32,
    pub iy: u32,
    pub u: T,
    pub v: T,
}

/// The mapped cube. Its side is always `leaf_resolution · 2^max_depth`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extent<T = f64> {
    pub origin: Point3<T>,
    pub leaf_resolution: T,
    pub max_depth: u32,
}

impl<T: Scalar> Extent<T> {
    pub fn new(origin: Point3<T>, leaf_resolution: T, max_depth: u32) -> Result<Self> {
        if !(leaf_resolution > T::zero()) || !leaf_resolution.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "leaf resolution must be positive, got {leaf_resolution}"
            )));
        }
        if max_depth == 0 || max_depth > 31 {
            return Err(Error::InvalidConfig(format!("max depth {max_depth} outside 1..=31")));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidConfig("extent origin is not finite".into()));
        }
        Ok(Self {
            origin,
            leaf_resolution,
            max_depth,
        })
    }

    /// Cube anchored so that it covers every point in `points` padded by
    /// `pad`. The origin is centred on the padded bounding box and snapped to
    /// the leaf lattice.
    pub fn fit<I>(points: I, pad: T, leaf_resolution: T, max_depth: u32) -> Result<Self>
    where
        I: IntoIterator<Item = Point3<T>>,
    {
        let mut lo = Point3::new(T::infinity(), T::infinity(), T::infinity());
        let mut hi = -lo;
        for p in points {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig("cannot fit an extent to no points".into()));
        }
        let probe = Self::new(Point3::zero(), leaf_resolution, max_depth)?;
        let side = probe.side();
        let pad = Point3::new(pad, pad, pad);
        let (lo, hi) = (lo - pad, hi + pad);
        let span = hi - lo;
        if span.x.max(span.y).max(span.z) >= side {
            return Err(Error::InvalidConfig(format!(
                "scene span {:.3} m exceeds the quadtree side {:.3} m; increase max depth",
                span.x.max(span.y).max(span.z),
                side
            )));
        }
        let half = T::of(0.5);
        let snap = |lo: T, hi: T| ((lo + hi) * half - side * half) / leaf_resolution;
        let origin = Point3::new(
            snap(lo.x, hi.x).floor() * leaf_resolution,
            snap(lo.y, hi.y).floor() * leaf_resolution,
            snap(lo.z, hi.z).floor() * leaf_resolution,
        );
        Self::new(origin, leaf_resolution, max_depth)
    }

    pub fn side(&self) -> T {
        self.leaf_resolution * T::of((1u64 << self.max_depth) as f64)
    }

    /// Cell side at `level`: `r · 2^(max_depth − level)`.
    pub fn cell_size(&self, level: u32) -> T {
        debug_assert!(level <= self.max_depth);
        self.leaf_resolution * T::of((1u64 << (self.max_depth - level)) as f64)
    }

    /// Maps the cube affinely onto `[−1, 1]³`.
    pub fn normalize(&self, p: Point3<T>) -> Point3<T> {
        let k = T::of(2.0) / self.side();
        let one = T::one();
        Point3::new(
            (p.x - self.origin.x) * k - one,
            (p.y - self.origin.y) * k - one,
            (p.z - self.origin.z) * k - one,
        )
    }

    /// Half-open containment test `[origin, origin + side)` on every axis.
    pub fn contains(&self, p: Point3<T>) -> bool {
        let side = self.side();
        (0..3).all(|i| {
            let d = p.axis(i) - self.origin.axis(i);
            d >= T::zero() && d < side
        })
    }

    pub fn square(&self, plane: Plane) -> Square<T> {
        Square {
            origin: plane.project(self.origin),
            leaf_resolution: self.leaf_resolution,
            max_depth: self.max_depth,
        }
    }

    pub fn out_of_extent(p: Point3<T>) -> Error {
        Error::OutOfExtent {
            x: p.x.as_f64(),
            y: p.y.as_f64(),
            z: p.z.as_f64(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Extent<U> {
        Extent {
            origin: self.origin.cast(),
            leaf_resolution: U::of(self.leaf_resolution.as_f64()),
            max_depth: self.max_depth,
        }
    }
}

/// Projection of the mapped cube onto one plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Square<T = f64> {
    pub origin: [T; 2],
    pub leaf_resolution: T,
    pub max_depth: u32,
}

impl<T: Scalar> Square<T> {
    /// Cell containing `q` at `level` and the fractional offsets within it.
    /// Returns `None` when `q` falls outside the square.
    #[inline]
    pub fn locate_cell(&self, level: u32, q: [T; 2]) -> Option<CellCoord<T>> {
        let cell = self.leaf_resolution * T::of((1u64 << (self.max_depth - level)) as f64);
        let n = 1u64 << level;
        let locate = |x: T, o: T| -> Option<(u32, T)> {
            let t = (x - o) / cell;
            if !(t >= T::zero()) {
                return None;
            }
            let i = t.floor();
            let idx = i.to_u64()?;
            if idx >= n {
                return None;
            }
            Some((idx as u32, t - i))
        };
        let (ix, u) = locate(q[0], self.origin[0])?;
        let (iy, v) = locate(q[1], self.origin[1])?;
        Some(CellCoord { ix, iy, u, v })
    }
}

/// Free-function form of [`Square::locate_cell`] reporting an error.
pub fn locate_cell<T: Scalar>(square: &Square<T>, level: u32, q: [T; 2]) -> Result<CellCoord<T>> {
    square.locate_cell(level, q).ok_or(Error::OutOfExtent {
        x: q[0].as_f64(),
        y: q[1].as_f64(),
        z: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn matmul(r: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, row) in r.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[i] += v * p[j];
            }
        }
        out
    }

    #[test]
    fn transform_identity_and_translation() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().transform_point(p), p);
        let pose = Pose::from_translation(Point3::new(1.0, 0.0, 0.0));
        assert_eq!(pose.transform_point(Point3::zero()), Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn transform_quarter_turn_about_z() {
        let r = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let expected = matmul(&r, [1.0, 0.0, 0.0]);
        let pose = Pose::from_yaw(std::f64::consts::FRAC_PI_2, Point3::zero());
        let got = pose.transform_point(Point3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(got.x, expected[0], epsilon = 1e-15);
        assert_abs_diff_eq!(got.y, expected[1], epsilon = 1e-15);
        assert_abs_diff_eq!(got.z, expected[2], epsilon = 1e-15);
    }

    #[test]
    fn projections_drop_orthogonal_axis() {
        let [xy, xz, yz] = project_to_planes(Point3::new(1.0, 2.0, 3.0));
        assert_eq!((xy, xz, yz), ([1.0, 2.0], [1.0, 3.0], [2.0, 3.0]));
        assert_eq!(project_to_planes(Point3::<f64>::zero()), [[0.0; 2]; 3]);
        let [xy, xz, yz] = project_to_planes(Point3::new(-4.5, 7.0, 0.1));
        assert_eq!((xy, xz, yz), ([-4.5, 7.0], [-4.5, 0.1], [7.0, 0.1]));
    }

    #[test]
    fn locate_cell_hand_values() {
        let sq = Square {
            origin: [0.0, 0.0],
            leaf_resolution: 0.1,
            max_depth: 12,
        };
        let c = locate_cell(&sq, 12, [0.05, 0.05]).unwrap();
        assert_eq!((c.ix, c.iy), (0, 0));
        assert_abs_diff_eq!(c.u, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.v, 0.5, epsilon = 1e-12);

        let c = locate_cell(&sq, 11, [0.25, 0.0]).unwrap();
        assert_eq!((c.ix, c.iy), (1, 0));
        assert_abs_diff_eq!(c.u, 0.25, epsilon = 1e-12);
        assert_eq!(c.v, 0.0);

        let c = locate_cell(&sq, 12, [0.0, 0.0]).unwrap();
        assert_eq!(c, CellCoord { ix: 0, iy: 0, u: 0.0, v: 0.0 });
    }

    #[test]
    fn locate_cell_rejects_outside() {
        let sq = Square {
            origin: [0.0, 0.0],
            leaf_resolution: 0.1,
            max_depth: 4,
        };
        assert!(locate_cell(&sq, 4, [-0.01, 0.5]).is_err());
        assert!(locate_cell(&sq, 4, [1.6, 0.5]).is_err());
        assert!(locate_cell(&sq, 4, [f64::NAN, 0.5]).is_err());
        assert!(locate_cell(&sq, 4, [1.59, 1.59]).is_ok());
    }

    #[test]
    fn extent_fit_covers_points() {
        let pts = vec![Point3::new(-3.0, 2.0, 0.0), Point3::new(7.5, -1.0, 4.0)];
        let e = Extent::fit(pts.clone(), 0.3, 0.1, 12).unwrap();
        assert_abs_diff_eq!(e.side(), 409.6, epsilon = 1e-9);
        for p in pts {
            assert!(e.contains(p));
        }
        assert!(Extent::fit(pts_far(), 0.3, 0.1, 4).is_err());
    }

    fn pts_far() -> Vec<Point3> {
        vec![Point3::zero(), Point3::new(100.0, 0.0, 0.0)]
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let mut pose = Pose::from_yaw(0.3, Point3::new(1.0, 2.0, 3.0));
        pose.rotation[0][0] += 1e-4;
        assert!(!pose.is_rigid(1e-6));
        let fixed = pose.orthonormalized();
        assert!(fixed.is_rigid(1e-12));
        assert_eq!(fixed.translation, pose.translation);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (-3.2f64..3.2, -1.5f64..1.5, -3.2f64..3.2, prop::array::uniform3(-50f64..50.0)).prop_map(
            |(a, b, c, t)| {
                // z-y-x Euler composition
                let rz = Pose::from_yaw(a, Point3::zero());
                let (sb, cb) = b.sin_cos();
                let ry = Pose {
                    rotation: [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]],
                    translation: Point3::zero(),
                };
                let (sc, cc) = c.sin_cos();
                let rx = Pose {
                    rotation: [[1.0, 0.0, 0.0], [0.0, cc, -sc], [0.0, sc, cc]],
                    translation: Point3::zero(),
                };
                let mut r = [[0.0; 3]; 3];
                for (i, row) in r.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let col = Point3::new(rx.rotation[0][j], rx.rotation[1][j], rx.rotation[2][j]);
                        let col = ry.rotate(col);
                        let col = rz.rotate(col);
                        *v = col.axis(i);
                    }
                }
                Pose {
                    rotation: r,
                    translation: Point3::from_array(t),
                }
            },
        )
    }

    proptest! {
        #[test]
        fn inverse_round_trips(pose in arb_pose(), p in prop::array::uniform3(-100f64..100.0)) {
            prop_assert!(pose.is_rigid(1e-9));
            let p = Point3::from_array(p);
            let back = pose.inverse().transform_point(pose.transform_point(p));
            prop_assert!(distance(back, p) < 1e-9);
        }

        #[test]
        fn projections_reconstruct_point(p in prop::array::uniform3(-1e3f64..1e3)) {
            let p = Point3::from_array(p);
            let [xy, xz, yz] = project_to_planes(p);
            prop_assert_eq!(Point3::new(xy[0], xy[1], xz[1]), p);
            prop_assert_eq!(Point3::new(xz[0], yz[0], yz[1]), p);
        }

        #[test]
        fn locate_cell_offsets_in_unit_square(
            q in prop::array::uniform2(0f64..409.5),
            dq in 0f64..5.0,
            level in 10u32..=12,
        ) {
            let sq = Square { origin: [0.0, 0.0], leaf_resolution: 0.1, max_depth: 12 };
            let a = sq.locate_cell(level, q).unwrap();
            prop_assert!(a.u >= 0.0 && a.u < 1.0 && a.v >= 0.0 && a.v < 1.0);
            if let Some(b) = sq.locate_cell(level, [q[0] + dq, q[1]]) {
                prop_assert!(b.ix >= a.ix);
            }
        }
    }
}
