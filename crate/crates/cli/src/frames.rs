//! Frame directories: `.bin` or `.csv` scans in filename order plus an
//! optional `poses.csv` of `frame_id,x,y,z` rows.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use seqlpd::cloud::{load_csv, load_kitti_bin, write_kitti_bin};
use seqlpd::{Error, PointCloud, Pose, Result};

pub const POSES_FILE: &str = "poses.csv";

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source: e,
    }
}

pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let is_frame = path
            .extension()
            .is_some_and(|ext| ext == "bin" || ext == "csv");
        if is_frame && path.file_name().is_some_and(|n| n != POSES_FILE) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if no == 0 && fields[0].parse::<u64>().is_err() {
            continue;
        }
        let bad = || Error::Format(format!("{POSES_FILE} line {}: expected frame_id,x,y,z", no + 1));
        if fields.len() != 4 {
            return Err(bad());
        }
        let id: u64 = fields[0].parse().map_err(|_| bad())?;
        let xyz: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(bad)?;
        poses.push(Pose::new(id, xyz[0], xyz[1], xyz[2]));
    }
    Ok(poses)
}

pub fn poses_csv(poses: &[Pose]) -> String {
    let mut out = String::from("frame_id,x,y,z\n");
    for p in poses {
        writeln!(out, "{},{},{},{}", p.frame_id, p.x, p.y, p.z).unwrap();
    }
    out
}

/// Scans in order with their poses, and whether the poses came from a file.
/// Without a poses file frames are numbered by position and sit at the
/// origin.
pub struct Frames {
    pub clouds: Vec<PointCloud>,
    pub poses: Vec<Pose>,
    pub posed: bool,
}

pub fn read_frames(dir: &Path) -> Result<Frames> {
    if !dir.is_dir() {
        return Err(Error::Io {
            path: dir.to_owned(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        });
    }
    let files = frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyInput("no .bin or .csv frames in directory"));
    }
    let pose_path = dir.join(POSES_FILE);
    let loaded = if pose_path.is_file() {
        let text = fs::read_to_string(&pose_path).map_err(|e| io_err(&pose_path, e))?;
        let poses = parse_poses(&text)?;
        if poses.len() != files.len() {
            return Err(Error::LengthMismatch(format!(
                "{} frames but {} poses",
                files.len(),
                poses.len()
            )));
        }
        Some(poses)
    } else {
        None
    };
    let posed = loaded.is_some();
    let poses =
        loaded.unwrap_or_else(|| (0..files.len()).map(|i| Pose::new(i as u64, 0.0, 0.0, 0.0)).collect());

    let mut clouds = Vec::with_capacity(files.len());
    for (path, pose) in files.iter().zip(&poses) {
        let mut cloud = match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => load_kitti_bin(path)?,
            _ => load_csv(path)?,
        };
        cloud.frame_id = pose.frame_id;
        clouds.push(cloud);
    }
    Ok(Frames {
        clouds,
        poses,
        posed,
    })
}

pub fn write_frames(dir: &Path, frames: &[(PointCloud, Pose)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (cloud, pose) in frames {
        write_kitti_bin(dir.join(format!("{:06}.bin", pose.frame_id)), cloud)?;
    }
    let poses: Vec<Pose> = frames.iter().map(|(_, p)| *p).collect();
    let path = dir.join(POSES_FILE);
    fs::write(&path, poses_csv(&poses)).map_err(|e| io_err(&path, e))
}
