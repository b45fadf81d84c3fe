//! Dense SDF sampling restricted to observed space, marching cubes, and PLY mesh I/O.

mod mask;
mod tables;

pub use mask::{CellIndex, OccupancyMask};

use std::path::Path;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::model::SdfModel;
use crate::ply;
use crate::scalar::Scalar;
use crate::trainer::Checkpoint;

use tables::TRI_TABLE;

/// Anything that can be sampled as a signed distance field.
///
/// `evaluator` hands out a per-thread closure; `None` marks a point the field
/// cannot answer for (e.g. outside the mapped extent).
pub trait SdfField: Sync {
    fn evaluator(&self) -> Box<dyn FnMut(Point3<f64>) -> Option<f64> + '_>;
}

impl<T: Scalar> SdfField for SdfModel<T> {
    fn evaluator(&self) -> Box<dyn FnMut(Point3<f64>) -> Option<f64> + '_> {
        let mut e = SdfModel::evaluator(self);
        Box::new(move |p| e.eval(p.cast()).ok().map(T::as_f64).filter(|v| v.is_finite()))
    }
}

/// Closure-backed field, for analytic shapes and tests.
pub struct AnalyticSdf<F>(pub F);

impl<F: Fn(Point3<f64>) -> f64 + Sync> SdfField for AnalyticSdf<F> {
    fn evaluator(&self) -> Box<dyn FnMut(Point3<f64>) -> Option<f64> + '_> {
        Box::new(|p| Some((self.0)(p)))
    }
}

/// Regular grid of SDF samples, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfGrid {
    pub origin: Point3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
    /// `NaN` where invalid.
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl SdfGrid {
    /// Grid with every point valid, sampled from `f`.
    pub fn from_fn(origin: Point3<f64>, resolution: f64, dims: [usize; 3], f: impl Fn(Point3<f64>) -> f64) -> Self {
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    values.push(f(grid_point(origin, resolution, [x, y, z])));
                }
            }
        }
        let valid = vec![true; values.len()];
        Self {
            origin,
            resolution,
            dims,
            values,
            valid,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn point(&self, x: usize, y: usize, z: usize) -> Point3<f64> {
        grid_point(self.origin, self.resolution, [x, y, z])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[inline]
fn grid_point(origin: Point3<f64>, res: f64, i: [usize; 3]) -> Point3<f64> {
    Point3::new(
        origin.x + i[0] as f64 * res,
        origin.y + i[1] as f64 * res,
        origin.z + i[2] as f64 * res,
    )
}

/// Samples `field` on a `resolution` lattice covering the mask's bounding box.
/// A lattice point is valid iff its coarse cell is in `mask` and the field
/// answers for it.
pub fn evaluate_sdf_grid(field: &dyn SdfField, mask: &OccupancyMask, resolution: f64) -> Result<SdfGrid> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(Error::InvalidConfig(format!("grid resolution must be positive, got {resolution}")));
    }
    let Some((lo, hi)) = mask.bounds() else {
        return Ok(SdfGrid {
            origin: Point3::zero(),
            resolution,
            dims: [0; 3],
            values: Vec::new(),
            valid: Vec::new(),
        });
    };
    let mr = mask.resolution();
    // when the coarse cell is a whole number of voxels, assign cells with
    // integer arithmetic so points on cell faces are classified exactly
    let ratio = (mr / resolution).round();
    let integral = ratio >= 1.0 && (ratio * resolution - mr).abs() <= 1e-9 * mr;
    let k = ratio as i64;
    let mut g0 = [0i64; 3];
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let (first, last) = if integral {
            (lo[a] as i64 * k, (hi[a] as i64 + 1) * k - 1)
        } else {
            (
                (lo[a] as f64 * mr / resolution).floor() as i64,
                ((hi[a] as f64 + 1.0) * mr / resolution).ceil() as i64,
            )
        };
        g0[a] = first;
        dims[a] = (last - first + 1) as usize;
    }
    let origin = Point3::new(g0[0] as f64, g0[1] as f64, g0[2] as f64) * resolution;
    let slab = dims[0] * dims[1];
    let slabs: Vec<(Vec<f64>, Vec<bool>)> = (0..dims[2])
        .into_par_iter()
        .map(|z| {
            let mut eval = field.evaluator();
            let mut values = vec![f64::NAN; slab];
            let mut valid = vec![false; slab];
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let p = grid_point(origin, resolution, [x, y, z]);
                    let g = [g0[0] + x as i64, g0[1] + y as i64, g0[2] + z as i64];
                    let inside = if integral {
                        let c = [g[0].div_euclid(k) as i32, g[1].div_euclid(k) as i32, g[2].div_euclid(k) as i32];
                        mask.contains_cell(&c)
                    } else {
                        mask.contains_point(p)
                    };
                    if !inside {
                        continue;
                    }
                    if let Some(v) = eval(p) {
                        let i = x + dims[0] * y;
                        values[i] = v;
                        valid[i] = true;
                    }
                }
            }
            (values, valid)
        })
        .collect();
    let mut values = Vec::with_capacity(slab * dims[2]);
    let mut valid = Vec::with_capacity(slab * dims[2]);
    for (v, m) in slabs {
        values.extend(v);
        valid.extend(m);
    }
    Ok(SdfGrid {
        origin,
        resolution,
        dims,
        values,
        valid,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Point3<f64>; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    /// Unnormalised normal `(b − a) × (c − a)`, twice the area in length.
    pub fn face_normal(&self, i: usize) -> Point3<f64> {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(c - a)
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        0.5 * self.face_normal(i).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Checks index bounds and vertex finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidConfig(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("mesh has non-finite vertices".into()));
        }
        Ok(())
    }
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Lower corner offset and axis of each cube edge.
const fn edge_geometry() -> [([usize; 3], usize); 12] {
    let mut out = [([0usize; 3], 0usize); 12];
    let mut e = 0;
    while e < 12 {
        let a = CORNERS[EDGES[e][0]];
        let b = CORNERS[EDGES[e][1]];
        let mut lo = [0usize; 3];
        let mut axis = 0;
        let mut i = 0;
        while i < 3 {
            lo[i] = if a[i] < b[i] { a[i] } else { b[i] };
            if a[i] != b[i] {
                axis = i;
            }
            i += 1;
        }
        out[e] = (lo, axis);
        e += 1;
    }
    out
}

const EDGE_GEOMETRY: [([usize; 3], usize); 12] = edge_geometry();

/// Table case for eight corner values: bit `i` set when corner `i` is below `iso`.
#[inline]
pub fn cube_case(values: &[f64; 8], iso: f64) -> usize {
    let mut case = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < iso {
            case |= 1 << i;
        }
    }
    case
}

/// Triangulates the `iso` level set over cells whose eight corners are valid.
/// Vertices are shared between neighbouring cells; faces are wound so their
/// normals point toward increasing field values.
pub fn marching_cubes(grid: &SdfGrid, iso: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return TriangleMesh::default();
    }
    let slabs: Vec<(Vec<[u64; 3]>, Vec<(u64, Point3<f64>)>)> = (0..nz - 1)
        .into_par_iter()
        .map(|z| {
            let mut tris = Vec::new();
            let mut verts: FxHashMap<u64, Point3<f64>> = FxHashMap::default();
            let mut order = Vec::new();
            for y in 0..ny - 1 {
                for x in 0..nx - 1 {
                    let mut vals = [0.0; 8];
                    let mut ok = true;
                    for (c, off) in CORNERS.iter().enumerate() {
                        let i = grid.index(x + off[0], y + off[1], z + off[2]);
                        ok &= grid.valid[i];
                        vals[c] = grid.values[i];
                    }
                    if !ok {
                        continue;
                    }
                    let case = cube_case(&vals, iso);
                    if case == 0 || case == 255 {
                        continue;
                    }
                    let row = &TRI_TABLE[case];
                    for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                        let mut ids = [0u64; 3];
                        for (k, &e) in tri.iter().enumerate() {
                            let (lo, axis) = EDGE_GEOMETRY[e as usize];
                            let base = [x + lo[0], y + lo[1], z + lo[2]];
                            let id = (grid.index(base[0], base[1], base[2]) as u64) * 3 + axis as u64;
                            verts.entry(id).or_insert_with(|| {
                                order.push(id);
                                edge_vertex(grid, base, axis, iso)
                            });
                            ids[k] = id;
                        }
                        // the table winds faces toward the low side; flip
                        tris.push([ids[0], ids[2], ids[1]]);
                    }
                }
            }
            let verts = order.into_iter().map(|id| (id, verts[&id])).collect();
            (tris, verts)
        })
        .collect();

    let mut index: FxHashMap<u64, u32> = FxHashMap::default();
    let mut mesh = TriangleMesh::default();
    for (_, verts) in &slabs {
        for &(id, p) in verts {
            index.entry(id).or_insert_with(|| {
                mesh.vertices.push(p);
                (mesh.vertices.len() - 1) as u32
            });
        }
    }
    for (tris, _) in &slabs {
        mesh.triangles.extend(tris.iter().map(|t| [index[&t[0]], index[&t[1]], index[&t[2]]]));
    }
    mesh
}

/// Linear interpolation along the edge from lattice point `base` in `+axis`.
fn edge_vertex(grid: &SdfGrid, base: [usize; 3], axis: usize, iso: f64) -> Point3<f64> {
    let mut tip = base;
    tip[axis] += 1;
    let fa = grid.values[grid.index(base[0], base[1], base[2])];
    let fb = grid.values[grid.index(tip[0], tip[1], tip[2])];
    let a = grid.point(base[0], base[1], base[2]);
    let b = grid.point(tip[0], tip[1], tip[2]);
    let denom = fb - fa;
    let t = if denom == 0.0 { 0.5 } else { ((iso - fa) / denom).clamp(0.0, 1.0) };
    a + (b - a) * t
}

/// Rebuilds the model stored in `ckpt` and extracts its zero level set over
/// the checkpoint's observed-space mask.
pub fn mesh_checkpoint(ckpt: &Checkpoint, resolution: f64) -> Result<TriangleMesh> {
    let model = ckpt.to_model::<f64>()?;
    let grid = evaluate_sdf_grid(&model, &ckpt.mask, resolution)?;
    Ok(marching_cubes(&grid, 0.0))
}

pub fn mesh_to_ply_bytes(mesh: &TriangleMesh) -> Vec<u8> {
    let v: Vec<[f32; 3]> = mesh.vertices.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect();
    ply::encode_binary(&v, Some(&mesh.triangles))
}

pub fn export_mesh_ply(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, mesh_to_ply_bytes(mesh)).map_err(Error::file(path))
}

pub fn mesh_from_ply(data: &ply::PlyData) -> Result<TriangleMesh> {
    let vertices: Vec<Point3<f64>> = data.vertex_positions()?.into_iter().map(Point3::from_array).collect();
    let mut triangles = Vec::new();
    if let Some(face) = data.element("face") {
        let lists = face
            .list("vertex_indices")
            .or_else(|| face.list("vertex_index"))
            .ok_or_else(|| Error::UnsupportedElement("face element has no vertex_indices list".into()))?;
        for (i, l) in lists.iter().enumerate() {
            if l.len() != 3 {
                return Err(Error::UnsupportedElement(format!("face {i} has {} vertices, only triangles are supported", l.len())));
            }
            let mut t = [0u32; 3];
            for (k, &v) in l.iter().enumerate() {
                if !(v >= 0.0) || v as usize >= vertices.len() {
                    return Err(Error::Parse {
                        line: 0,
                        message: format!("face {i} references vertex {v} of {}", vertices.len()),
                    });
                }
                t[k] = v as u32;
            }
            triangles.push(t);
        }
    }
    Ok(TriangleMesh { vertices, triangles })
}

pub fn import_mesh_ply(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    mesh_from_ply(&ply::read(path)?)
}
