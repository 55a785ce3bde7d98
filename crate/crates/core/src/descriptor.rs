use crate::error::{Error, Result};

/// Length of the global place descriptor.
pub const DESCRIPTOR_DIM: usize = 256;

/// A global place signature. Descriptors produced by the pipeline are unit
/// norm; raw vectors are accepted so clustering can run on arbitrary data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlobalDescriptor(Vec<f32>);

impl GlobalDescriptor {
    pub fn from_vec(values: Vec<f32>) -> Self {
        GlobalDescriptor(values)
    }

    /// Scales `values` to unit L2 norm. An all-zero vector is returned unchanged.
    pub fn normalized(mut values: Vec<f32>) -> Self {
        let norm = values
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            for v in values.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
        GlobalDescriptor(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

impl From<Vec<f32>> for GlobalDescriptor {
    fn from(v: Vec<f32>) -> Self {
        GlobalDescriptor(v)
    }
}

/// Squared Euclidean distance accumulated in `f64`. Panics on dimension mismatch.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "descriptor dimensions differ");
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    acc
}

/// Euclidean distance between two descriptors.
pub fn l2(a: &GlobalDescriptor, b: &GlobalDescriptor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(a.dim(), b.dim()));
    }
    Ok(squared_l2(a.as_slice(), b.as_slice()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, i: usize) -> GlobalDescriptor {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        GlobalDescriptor::from_vec(v)
    }

    #[test]
    fn distances() {
        let a = unit(DESCRIPTOR_DIM, 3);
        let b = unit(DESCRIPTOR_DIM, 200);
        assert_eq!(l2(&a, &a).unwrap(), 0.0);
        assert_eq!(l2(&a, &b).unwrap(), 2f64.sqrt());
        assert_eq!(l2(&a, &b).unwrap(), l2(&b, &a).unwrap());
        assert!(matches!(l2(&a, &unit(3, 0)), Err(Error::Dimension(256, 3))));
    }

    #[test]
    fn normalization() {
        let d = GlobalDescriptor::normalized(vec![3.0, 4.0]);
        assert!((d.norm() - 1.0).abs() < 1e-7);
        assert_eq!(GlobalDescriptor::normalized(vec![0.0; 4]).norm(), 0.0);
    }
}
