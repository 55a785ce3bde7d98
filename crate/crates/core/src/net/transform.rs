//! Alignment networks producing a square matrix that is right-multiplied onto
//! the per-point rows: shared per-point MLP, max-pool over points, a fully
//! connected head, and an output layer whose bias starts at the identity.

use super::layers::{dense, max_pool, mlp};
use super::tensor::{Tensor, WeightSet};
use crate::error::{Error, Result};

pub const INPUT_TNET: &str = "input_tnet";
pub const FEATURE_TNET: &str = "feature_tnet";

fn transform_matrix(rows: &Tensor, ws: &WeightSet, prefix: &str) -> Result<Tensor> {
    if rows.shape().len() != 2 || rows.rows() == 0 {
        return Err(Error::Shape(format!(
            "{prefix} expects a non-empty n×d input, got {:?}",
            rows.shape()
        )));
    }
    let dim = rows.cols();
    let (hidden, width) = mlp(rows.data(), dim, ws, &format!("{prefix}.mlp"))?;
    let pooled = max_pool(&hidden, width);
    let (head, head_width) = mlp(&pooled, width, ws, &format!("{prefix}.fc"))?;
    let w = ws.get(&format!("{prefix}.out.weight"))?;
    let b = ws.get(&format!("{prefix}.out.bias"))?;
    if w.cols() != dim * dim {
        return Err(Error::Shape(format!(
            "{prefix}.out.weight produces {} values, need {}",
            w.cols(),
            dim * dim
        )));
    }
    let flat = dense(&head, head_width, w, b, false)?;
    Tensor::new(vec![dim, dim], flat)
}

/// 3×3 alignment matrix for raw coordinates (`n × 3`).
pub fn input_transform(points: &Tensor, ws: &WeightSet) -> Result<Tensor> {
    if points.cols() != 3 {
        return Err(Error::Shape(format!(
            "input transform expects n×3 points, got {:?}",
            points.shape()
        )));
    }
    transform_matrix(points, ws, INPUT_TNET)
}

/// F×F alignment matrix for per-point features (`n × F`).
pub fn feature_transform(feats: &Tensor, ws: &WeightSet) -> Result<Tensor> {
    transform_matrix(feats, ws, FEATURE_TNET)
}

/// Row-major identity matrix, flattened.
pub(crate) fn identity(dim: usize) -> Vec<f32> {
    let mut m = vec![0.0; dim * dim];
    for i in 0..dim {
        m[i * dim + i] = 1.0;
    }
    m
}
