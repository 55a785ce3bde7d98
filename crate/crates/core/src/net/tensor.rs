//! Dense `f32` tensors, named weight sets, and the `LPDW` weight file format.
//!
//! Layout (little-endian): magic `LPDW`, `u32` version (1), `u32` tensor count,
//! then per tensor a `u16` name length, the UTF-8 name, a `u8` rank, `rank`
//! `u32` dimensions and the row-major `f32` payload. Tensors are written in
//! name order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::Reader;

const MAGIC: &[u8; 4] = b"LPDW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("tensor holds non-finite values".into()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }
}

/// Named parameter tensors of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Shape(format!("missing tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.tensors.values().map(|t| t.len() * 4 + 64).sum();
        let mut out = Vec::with_capacity(12 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "weight file");
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let count = r.u32()? as usize;
        let mut ws = WeightSet::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("weight file: tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("weight file: {name} is too large")))?;
            let data = r.f32_vec(n)?;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!(
                    "weight file: {name} holds non-finite values"
                )));
            }
            if ws.contains(&name) {
                return Err(Error::Format(format!("weight file: duplicate tensor {name}")));
            }
            ws.insert(name, Tensor { shape, data });
        }
        r.finish()?;
        Ok(ws)
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

    fn sample() -> WeightSet {
        let mut ws = WeightSet::new();
        ws.insert("b", Tensor::new(vec![2], vec![1.5, -0.0]).unwrap());
        ws.insert("a.weight", Tensor::new(vec![2, 3], (0..6).map(|i| i as f32).collect()).unwrap());
        ws.insert("scalar", Tensor::new(vec![], vec![7.0]).unwrap());
        ws
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ws = sample();
        let bytes = ws.to_bytes();
        let back = WeightSet::from_bytes(&bytes).unwrap();
        assert_eq!(back, ws);
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.get("b").unwrap().data()[1].is_sign_negative());
    }

    #[test]
    fn bad_headers_and_trailing_bytes() {
        let mut bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(WeightSet::from_bytes(&bad), Err(Error::Format(_))));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(WeightSet::from_bytes(&v2), Err(Error::Format(_))));
        bytes.push(0);
        assert!(matches!(WeightSet::from_bytes(&bytes), Err(Error::Format(_))));
        let truncated = &sample().to_bytes()[..20];
        assert!(matches!(WeightSet::from_bytes(truncated), Err(Error::Format(_))));
    }

    #[test]
    fn tensor_shape_must_match_data() {
        assert!(matches!(Tensor::new(vec![2, 2], vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(Tensor::new(vec![1], vec![f32::NAN]).is_err());
    }
}
