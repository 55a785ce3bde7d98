//! Row-wise dense layers. Every output row depends only on its input row, and
//! each dot product is accumulated in input-index order, so results do not
//! depend on how rows are scheduled across threads.

use rayon::prelude::*;

use super::tensor::{Tensor, WeightSet};
use crate::error::{Error, Result};

const MIN_ROWS_PER_TASK: usize = 64;

/// `relu?(input · W + b)` for `input` holding `rows × in_dim` values, `W` of
/// shape `[in_dim, out_dim]`.
pub(crate) fn dense(
    input: &[f32],
    in_dim: usize,
    weight: &Tensor,
    bias: &Tensor,
    relu: bool,
) -> Result<Vec<f32>> {
    if weight.shape().len() != 2 || weight.rows() != in_dim {
        return Err(Error::Shape(format!(
            "weight shape {:?} cannot take {in_dim}-wide input",
            weight.shape()
        )));
    }
    let out_dim = weight.cols();
    if bias.shape() != [out_dim] {
        return Err(Error::Shape(format!(
            "bias shape {:?} does not match output width {out_dim}",
            bias.shape()
        )));
    }
    debug_assert_eq!(input.len() % in_dim.max(1), 0);
    let rows = if in_dim == 0 { 0 } else { input.len() / in_dim };
    let w = weight.data();
    let b = bias.data();
    let mut out = vec![0.0f32; rows * out_dim];
    out.par_chunks_mut(out_dim)
        .with_min_len(MIN_ROWS_PER_TASK)
        .enumerate()
        .for_each(|(r, dst)| {
            dst.copy_from_slice(b);
            let src = &input[r * in_dim..(r + 1) * in_dim];
            for (i, &x) in src.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let wrow = &w[i * out_dim..(i + 1) * out_dim];
                for (o, &wv) in dst.iter_mut().zip(wrow) {
                    *o += x * wv;
                }
            }
            if relu {
                for o in dst.iter_mut() {
                    *o = o.max(0.0);
                }
            }
        });
    Ok(out)
}

/// Number of consecutive `{prefix}.{i}.weight` tensors present.
pub(crate) fn layer_count(ws: &WeightSet, prefix: &str) -> usize {
    (0..)
        .take_while(|i| ws.contains(&format!("{prefix}.{i}.weight")))
        .count()
}

/// Applies every `{prefix}.{i}` layer in turn with ReLU; returns the output
/// and its width.
pub(crate) fn mlp(
    input: &[f32],
    in_dim: usize,
    ws: &WeightSet,
    prefix: &str,
) -> Result<(Vec<f32>, usize)> {
    let mut x = input.to_vec();
    let mut width = in_dim;
    for i in 0..layer_count(ws, prefix) {
        let w = ws.get(&format!("{prefix}.{i}.weight"))?;
        let b = ws.get(&format!("{prefix}.{i}.bias"))?;
        x = dense(&x, width, w, b, true)?;
        width = w.cols();
    }
    Ok((x, width))
}

/// Element-wise maximum over rows.
pub(crate) fn max_pool(rows: &[f32], width: usize) -> Vec<f32> {
    let mut out = vec![f32::NEG_INFINITY; width];
    for row in rows.chunks_exact(width) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = o.max(v);
        }
    }
    out
}

/// `rows (n × d) · m (d × e)`.
pub(crate) fn right_multiply(rows: &[f32], d: usize, m: &[f32], e: usize) -> Vec<f32> {
    debug_assert_eq!(m.len(), d * e);
    let n = if d == 0 { 0 } else { rows.len() / d };
    let mut out = vec![0.0f32; n * e];
    out.par_chunks_mut(e)
        .with_min_len(MIN_ROWS_PER_TASK)
        .enumerate()
        .for_each(|(r, dst)| {
            let src = &rows[r * d..(r + 1) * d];
            for (i, &x) in src.iter().enumerate() {
                let mrow = &m[i * e..(i + 1) * e];
                for (o, &mv) in dst.iter_mut().zip(mrow) {
                    *o += x * mv;
                }
            }
        });
    out
}
