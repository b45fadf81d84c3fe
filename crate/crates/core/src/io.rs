//! Scan, pose and point-cloud loaders.

use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::evaluation::PointCloud;
use crate::geometry::{Point3, Pose};
use crate::ply;

/// One scan: endpoints in the sensor frame plus the sensor-to-world pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub pose: Pose<f64>,
    pub points: Vec<Point3<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSet {
    pub frames: Vec<Frame>,
    /// Every `stride`-th frame of the source sequence was kept.
    pub stride: usize,
}

impl ScanSet {
    pub fn point_count(&self) -> usize {
        self.frames.iter().map(|f| f.points.len()).sum()
    }

    /// Keeps frames `0, n, 2n, …`.
    pub fn subsample(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("frame stride must be at least 1".into()));
        }
        self.frames = self.frames.into_iter().step_by(n).collect();
        self.stride *= n;
        Ok(self)
    }
}

/// Little-endian `f32` quadruples `(x, y, z, intensity)`; intensity is dropped.
pub fn parse_scan_bin(bytes: &[u8]) -> Result<Vec<Point3<f64>>> {
    if bytes.len() % 16 != 0 {
        return Err(Error::SizeNotMultipleOf16 { len: bytes.len() as u64 });
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|r| {
            let f = |i: usize| f32::from_le_bytes(r[i..i + 4].try_into().unwrap()) as f64;
            Point3::new(f(0), f(4), f(8))
        })
        .collect())
}

pub fn load_scan_bin(path: impl AsRef<Path>) -> Result<Vec<Point3<f64>>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(Error::file(path))?;
    parse_scan_bin(&bytes)
}

pub fn scan_bin_bytes(points: &[Point3<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_scan_bin(path: impl AsRef<Path>, points: &[Point3<f64>]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scan_bin_bytes(points)).map_err(Error::file(path))
}

/// One pose per non-empty line: 12 reals, row-major `[R | t]`.
pub fn parse_poses(text: &str) -> Result<Vec<Pose<f64>>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("`{t}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m: [f64; 12] = values.as_slice().try_into().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("expected 12 values, found {}", values.len()),
        })?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "non-finite value".into(),
            });
        }
        let mut pose = Pose::from_3x4(&m);
        let det = pose.determinant();
        if !(det > 0.0) {
            return Err(Error::NonRigid { line: line_no, det });
        }
        let drift = pose.orthonormality_error();
        if drift > 1e-6 {
            warn!("pose on line {line_no}: rotation drift {drift:.2e}, re-orthonormalising");
            pose = pose.orthonormalized();
        }
        poses.push(pose);
    }
    Ok(poses)
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<Pose<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
    parse_poses(&text)
}

pub fn format_poses(poses: &[Pose<f64>]) -> String {
    let mut out = String::new();
    for p in poses {
        let row: Vec<String> = p.to_3x4().iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_poses(path: impl AsRef<Path>, poses: &[Pose<f64>]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_poses(poses)).map_err(Error::file(path))
}

/// Vertex positions of an ascii or binary little-endian PLY.
pub fn load_ply_points(path: impl AsRef<Path>) -> Result<PointCloud> {
    let data = ply::read(path)?;
    Ok(PointCloud::new(data.vertex_positions()?.into_iter().map(Point3::from_array).collect()))
}

pub fn write_ply_points(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let v: Vec<[f32; 3]> = cloud.points.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect();
    std::fs::write(path, ply::encode_binary(&v, None)).map_err(Error::file(path))
}

/// `*.bin` files of `dir` in lexicographic order.
pub fn list_scan_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(Error::file(dir))? {
        let path = entry.map_err(Error::file(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "bin") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Pairs the sorted scans in `dir` with the poses in `poses` by index and keeps
/// every `stride`-th frame.
pub fn load_scan_set(dir: impl AsRef<Path>, poses: impl AsRef<Path>, stride: usize) -> Result<ScanSet> {
    if stride == 0 {
        return Err(Error::InvalidConfig("frame stride must be at least 1".into()));
    }
    let files = list_scan_files(&dir)?;
    let poses = load_poses(&poses)?;
    if files.len() != poses.len() {
        return Err(Error::InvalidConfig(format!(
            "{} scan files but {} poses",
            files.len(),
            poses.len()
        )));
    }
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!("no .bin scans in {}", dir.as_ref().display())));
    }
    let frames = files
        .iter()
        .zip(poses)
        .step_by(stride)
        .map(|(f, pose)| Ok(Frame { pose, points: load_scan_bin(f)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanSet { frames, stride })
}

/// Writes `scans` as `dir/scans/NNNNNN.bin` plus `dir/poses.txt`.
pub fn write_scan_set(dir: impl AsRef<Path>, scans: &ScanSet) -> Result<()> {
    let dir = dir.as_ref();
    let scan_dir = dir.join("scans");
    std::fs::create_dir_all(&scan_dir).map_err(Error::file(&scan_dir))?;
    for (i, f) in scans.frames.iter().enumerate() {
        write_scan_bin(scan_dir.join(format!("{i:06}.bin")), &f.points)?;
    }
    let poses: Vec<Pose<f64>> = scans.frames.iter().map(|f| f.pose).collect();
    write_poses(dir.join("poses.txt"), &poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(parse_scan_bin(&bytes).unwrap(), vec![Point3::new(1.0, 2.0, 3.0)]);
        assert!(parse_scan_bin(&[]).unwrap().is_empty());
        assert!(matches!(parse_scan_bin(&[0u8; 33]), Err(Error::SizeNotMultipleOf16 { len: 33 })));
    }

    #[test]
    fn pose_lines() {
        let p = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        assert_eq!(p, vec![Pose::identity()]);
        let p = parse_poses("\n# comment\n1 0 0 4.5 0 1 0 -2 0 0 1 0.25\n").unwrap();
        assert_eq!(p[0].rotation, Pose::<f64>::identity().rotation);
        assert_eq!(p[0].translation, Point3::new(4.5, -2.0, 0.25));
        let err = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_poses("1 0 0 0 0 1 0 0 0 0 x 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_poses("1 0 0 0 0 1 0 0 0 0 -1 0\n").unwrap_err();
        assert!(matches!(err, Error::NonRigid { line: 1, .. }));
    }

    #[test]
    fn drifting_rotation_is_repaired() {
        let p = parse_poses("1.001 0.002 0 0 0 0.999 0 0 0 0 1 0\n").unwrap();
        assert!(p[0].orthonormality_error() < 1e-12);
    }

    #[test]
    fn poses_round_trip() {
        let poses = vec![
            Pose::from_yaw(0.3, Point3::new(1.0, 2.0, 3.0)),
            Pose::from_yaw(-2.1, Point3::new(-0.5, 0.0, 1.8)),
        ];
        let back = parse_poses(&format_poses(&poses)).unwrap();
        assert_eq!(back, poses);
    }

    #[test]
    fn directory_round_trip_with_stride() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = (0..5)
            .map(|i| Frame {
                pose: Pose::from_translation(Point3::new(i as f64, 0.0, 0.0)),
                points: vec![Point3::new(1.0, i as f64, 0.5); i + 1],
            })
            .collect();
        write_scan_set(dir.path(), &ScanSet { frames: frames.clone(), stride: 1 }).unwrap();
        std::fs::write(dir.path().join("scans/readme.txt"), "ignored").unwrap();
        let all = load_scan_set(dir.path().join("scans"), dir.path().join("poses.txt"), 1).unwrap();
        assert_eq!(all.frames, frames);
        let every_other = load_scan_set(dir.path().join("scans"), dir.path().join("poses.txt"), 2).unwrap();
        assert_eq!(every_other.frames.len(), 3);
        assert_eq!(every_other.frames[1], frames[2]);
        assert_eq!(all.subsample(2).unwrap().frames, every_other.frames);
    }

    #[test]
    fn ply_points() {
        let dir = tempfile::tempdir().unwrap();
        let ascii = dir.path().join("a.ply");
        std::fs::write(
            &ascii,
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n-1 0.5 2\n",
        )
        .unwrap();
        assert_eq!(load_ply_points(&ascii).unwrap().len(), 3);
        let cloud = PointCloud::new(vec![Point3::new(0.1, 0.2, 0.3), Point3::new(-4.0, 5.5, 1e-3)]);
        let bin = dir.path().join("b.ply");
        write_ply_points(&bin, &cloud).unwrap();
        let back = load_ply_points(&bin).unwrap();
        for (a, b) in back.points.iter().zip(&cloud.points) {
            assert!((*a - *b).norm() < 1e-6);
        }
        let short = dir.path().join("c.ply");
        std::fs::write(
            &short,
            "ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n-1 0.5 2\n",
        )
        .unwrap();
        assert!(matches!(load_ply_points(&short), Err(Error::TruncatedFile { .. })));
    }
}
