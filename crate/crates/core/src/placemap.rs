//! Append-only store of `(frame id, pose, descriptor)` entries in frame order.
//!
//! The `LPDM` file (little-endian): magic `LPDM`, `u32` version (1), `u32`
//! descriptor dimension, `u64` entry count, then per entry a `u64` frame id,
//! three `f64` pose coordinates and the `f32` descriptor.

use std::fs;
use std::path::Path;

use crate::cloud::Pose;
use crate::descriptor::{GlobalDescriptor, DESCRIPTOR_DIM};
use crate::error::{Error, Result};
use crate::io::Reader;

pub use crate::descriptor::l2;

const MAGIC: &[u8; 4] = b"LPDM";
const VERSION: u32 = 1;
/// Accepted deviation of a stored descriptor's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceEntry {
    pub frame_id: u64,
    pub pose: Pose,
    pub descriptor: GlobalDescriptor,
}

impl PlaceEntry {
    pub fn new(frame_id: u64, pose: Pose, descriptor: GlobalDescriptor) -> Self {
        PlaceEntry {
            frame_id,
            pose: Pose { frame_id, ..pose },
            descriptor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceMap {
    dim: usize,
    entries: Vec<PlaceEntry>,
}

impl Default for PlaceMap {
    fn default() -> Self {
        Self::new()
    }
}

impl PlaceMap {
    pub fn new() -> Self {
        Self::with_dim(DESCRIPTOR_DIM)
    }

    pub fn with_dim(dim: usize) -> Self {
        PlaceMap {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PlaceEntry] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&PlaceEntry> {
        self.entries.get(index)
    }

    pub fn descriptors(&self) -> Vec<GlobalDescriptor> {
        self.entries.iter().map(|e| e.descriptor.clone()).collect()
    }

    /// Position of the entry with `frame_id`.
    pub fn index_of(&self, frame_id: u64) -> Option<usize> {
        self.entries
            .binary_search_by_key(&frame_id, |e| e.frame_id)
            .ok()
    }

    pub fn insert(&mut self, entry: PlaceEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.frame_id <= last.frame_id {
                return Err(Error::Order {
                    last: last.frame_id,
                    got: entry.frame_id,
                });
            }
        }
        if entry.descriptor.dim() != self.dim {
            return Err(Error::Dimension(self.dim, entry.descriptor.dim()));
        }
        let norm = entry.descriptor.norm();
        if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(Error::Norm(norm));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Consecutive entries `[start, end)` as a new map.
    pub fn slice(&self, start: usize, end: usize) -> PlaceMap {
        PlaceMap {
            dim: self.dim,
            entries: self.entries[start..end].to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.entries.len() * (32 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.frame_id.to_le_bytes());
            for v in [e.pose.x, e.pose.y, e.pose.z] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in e.descriptor.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "place map");
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let entry_size = 32 + 4 * dim as u64;
        if count.checked_mul(entry_size) != Some(r.remaining() as u64) {
            return Err(Error::Format(format!(
                "place map: {count} entries of dimension {dim} do not fit {} bytes",
                r.remaining()
            )));
        }
        let mut map = PlaceMap::with_dim(dim);
        map.entries.reserve(count as usize);
        for _ in 0..count {
            let frame_id = r.u64()?;
            let (x, y, z) = (r.f64()?, r.f64()?, r.f64()?);
            let descriptor = GlobalDescriptor::from_vec(r.f32_vec(dim)?);
            map.insert(PlaceEntry::new(frame_id, Pose::new(frame_id, x, y, z), descriptor))
                .map_err(|e| Error::Format(format!("place map: {e}")))?;
        }
        r.finish()?;
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u64, norm: f32) -> PlaceEntry {
        let mut v = vec![0.0; DESCRIPTOR_DIM];
        v[(id as usize) % DESCRIPTOR_DIM] = norm;
        PlaceEntry::new(id, Pose::new(id, id as f64, 0.5, -1.0), GlobalDescriptor::from_vec(v))
    }

    #[test]
    fn ordered_inserts() {
        let mut m = PlaceMap::new();
        for id in 0..3 {
            m.insert(entry(id, 1.0)).unwrap();
        }
        assert_eq!(m.len(), 3);
        assert_eq!(m.index_of(2), Some(2));
    }

    #[test]
    fn insert_errors() {
        let mut m = PlaceMap::new();
        m.insert(entry(1, 1.0)).unwrap();
        assert!(matches!(m.insert(entry(1, 1.0)), Err(Error::Order { last: 1, got: 1 })));
        assert!(matches!(m.insert(entry(2, 0.5)), Err(Error::Norm(_))));
    }

    #[test]
    fn round_trip_and_corruption() {
        let mut m = PlaceMap::new();
        for id in [3, 9, 40] {
            m.insert(entry(id, 1.0)).unwrap();
        }
        let bytes = m.to_bytes();
        assert_eq!(PlaceMap::from_bytes(&bytes).unwrap(), m);

        assert!(matches!(
            PlaceMap::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut v2 = bytes.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        match PlaceMap::from_bytes(&v2) {
            Err(Error::Format(msg)) => assert!(msg.contains("unsupported version"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
