//! Point-cloud ingestion, submap assembly and spatial neighbour search.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;

/// Default number of points in a normalized submap.
pub const DEFAULT_SUBMAP_POINTS: usize = 4096;
/// Default trajectory length, in meters, covered by one submap.
pub const DEFAULT_TRAJECTORY_LEN: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: u64,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame_id: u64) -> Self {
        PointCloud { points, frame_id }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Translation-only sensor pose in the map frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub frame_id: u64,
}

impl Pose {
    pub fn new(frame_id: u64, x: f64, y: f64, z: f64) -> Self {
        Pose { x, y, z, frame_id }
    }

    pub fn position(&self) -> Point3 {
        Point3::new(self.x, self.y, self.z)
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.position() - other.position()).norm()
    }
}

/// A resampled, centered and scaled point set with every coordinate in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Submap {
    pub points: Vec<Point3>,
    /// Divisor applied after centering.
    pub scale: f64,
    /// Centroid removed before scaling.
    pub centroid: Point3,
}

impl Submap {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Reads a KITTI velodyne scan: little-endian `f32` records of `x, y, z, intensity`.
pub fn load_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_bin(&bytes)
}

pub fn parse_kitti_bin(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "KITTI scan length {} is not a multiple of 16",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (i, rec) in bytes.chunks_exact(16).enumerate() {
        let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
        let (x, y, z, intensity) = (f(0), f(4), f(8), f(12));
        if !(x.is_finite() && y.is_finite() && z.is_finite() && intensity.is_finite()) {
            return Err(Error::Format(format!("non-finite value in record {i}")));
        }
        points.push(Point3::new(x as f64, y as f64, z as f64));
    }
    Ok(PointCloud::new(points, 0))
}

/// Writes a cloud in KITTI layout with zero intensity.
pub fn write_kitti_bin(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads `x,y,z` lines; a leading line whose first field is not numeric is a header.
pub fn load_csv(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "line {line_no}: expected 3 fields, found {}",
                fields.len()
            )));
        }
        let mut xyz = [0.0; 3];
        for (slot, field) in xyz.iter_mut().zip(&fields) {
            *slot = match field.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    return Err(Error::Format(format!(
                        "line {line_no}: bad coordinate {field:?}"
                    )))
                }
            };
        }
        points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    }
    Ok(PointCloud::new(points, 0))
}

pub fn write_csv(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "x,y,z").unwrap();
    for p in &cloud.points {
        writeln!(out, "{},{},{}", p.x, p.y, p.z).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Merges the trailing frames whose poses fit within `trajectory_len` meters of
/// path ending at the last pose. Frame points are in their own sensor frame and
/// are re-expressed in the sensor frame of the last frame.
pub fn accumulate_submap(
    frames: &[PointCloud],
    poses: &[Pose],
    trajectory_len: f64,
) -> Result<PointCloud> {
    if frames.len() != poses.len() {
        return Err(Error::LengthMismatch(format!(
            "{} frames but {} poses",
            frames.len(),
            poses.len()
        )));
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames to accumulate"));
    }
    if !(trajectory_len > 0.0) {
        return Err(Error::InvalidParams(format!(
            "trajectory length must be positive, got {trajectory_len}"
        )));
    }

    let last = poses.len() - 1;
    let anchor = poses[last].position();
    let mut first = last;
    let mut travelled = 0.0;
    while first > 0 {
        travelled += poses[first].distance(&poses[first - 1]);
        if travelled > trajectory_len {
            break;
        }
        first -= 1;
    }

    let total = frames[first..].iter().map(PointCloud::len).sum();
    let mut points = Vec::with_capacity(total);
    for (frame, pose) in frames[first..].iter().zip(&poses[first..]) {
        let offset = pose.position() - anchor;
        points.extend(frame.points.iter().map(|&p| p + offset));
    }
    Ok(PointCloud::new(points, frames[last].frame_id))
}

/// Resamples to exactly `n_sub` points, removes the centroid and scales by the
/// largest absolute coordinate.
pub fn normalize_submap(cloud: &PointCloud, n_sub: usize, seed: u64) -> Result<Submap> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cannot normalize an empty cloud"));
    }
    if n_sub == 0 {
        return Err(Error::InvalidParams("submap size must be at least 1".into()));
    }
    let n = cloud.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Point3> = if n > n_sub {
        let mut picked = index::sample(&mut rng, n, n_sub).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| cloud.points[i]).collect()
    } else {
        let mut pts = cloud.points.clone();
        pts.extend((n..n_sub).map(|_| cloud.points[rng.gen_range(0..n)]));
        pts
    };

    let inv = 1.0 / points.len() as f64;
    let (mut cx, mut cy, mut cz) = (0.0, 0.0, 0.0);
    for p in &points {
        cx += p.x;
        cy += p.y;
        cz += p.z;
    }
    let centroid = Point3::new(cx * inv, cy * inv, cz * inv);

    let mut max_abs = 0.0f64;
    for p in points.iter_mut() {
        *p = *p - centroid;
        max_abs = max_abs.max(p.x.abs()).max(p.y.abs()).max(p.z.abs());
    }
    let scale = if max_abs > 0.0 { max_abs } else { 1.0 };
    for p in points.iter_mut() {
        p.x /= scale;
        p.y /= scale;
        p.z /= scale;
    }
    Ok(Submap {
        points,
        scale,
        centroid,
    })
}

/// KD-tree over a fixed 3D point set.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    tree: KdTree,
}

impl SpatialIndex {
    pub fn new(points: &[Point3]) -> Self {
        let coords = points.iter().flat_map(|p| p.to_array()).collect();
        SpatialIndex {
            tree: KdTree::new(3, coords),
        }
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    /// `min(k, len)` point indices, nearest first, ties to the lower index.
    pub fn knn(&self, query: Point3, k: usize) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::InvalidParams("k must be at least 1".into()));
        }
        Ok(self
            .tree
            .knn(&query.to_array(), k)
            .into_iter()
            .map(|n| n.index)
            .collect())
    }
}
