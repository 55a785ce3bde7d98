//! Graph aggregation in learned feature space.
//!
//! Neighbours are found after aligning features with the feature transform,
//! while edges `[p_i, p_i - p_j]` are built from the unaligned features. Two
//! shared layers act on every edge and the k edges of a point are max-pooled.

use rayon::prelude::*;

use super::layers::{dense, right_multiply};
use super::tensor::{Tensor, WeightSet};
use super::transform::feature_transform;
use crate::error::{Error, Result};

pub const EDGE_MLP: &str = "edge_mlp";

/// Squared distance between two feature rows, accumulated in `f64`.
#[inline]
pub fn feature_distance2(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    acc
}

/// Candidate rows scored together; each keeps its own accumulator, so every
/// distance is summed in the same order as [`feature_distance2`].
const LANES: usize = 8;

/// For each row, the `min(k, n - 1)` nearest other rows, nearest first, ties
/// to the lower index.
pub fn feature_knn(rows: &[f32], dim: usize, k: usize) -> Vec<Vec<usize>> {
    let n = if dim == 0 { 0 } else { rows.len() / dim };
    let k = k.min(n.saturating_sub(1));
    if k == 0 {
        return vec![Vec::new(); n];
    }
    // Blocks of LANES rows stored dimension-major: block[t * LANES + lane].
    let blocks = n.div_ceil(LANES);
    let mut packed = vec![0.0f64; blocks * dim * LANES];
    for j in 0..n {
        let base = (j / LANES) * dim * LANES + j % LANES;
        for t in 0..dim {
            packed[base + t * LANES] = rows[j * dim + t] as f64;
        }
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let q: Vec<f64> = rows[i * dim..(i + 1) * dim].iter().map(|&x| x as f64).collect();
            let mut cand: Vec<(f64, usize)> = Vec::with_capacity(blocks * LANES);
            for (b, block) in packed.chunks_exact(dim * LANES).enumerate() {
                let mut acc = [0.0f64; LANES];
                for (&qt, col) in q.iter().zip(block.chunks_exact(LANES)) {
                    for (a, &c) in acc.iter_mut().zip(col) {
                        let d = qt - c;
                        *a += d * d;
                    }
                }
                cand.extend(
                    acc.iter()
                        .enumerate()
                        .map(|(l, &d)| (d, b * LANES + l))
                        .filter(|&(_, j)| j < n && j != i),
                );
            }
            let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_key);
                cand.truncate(k);
            }
            cand.sort_unstable_by(by_key);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Aggregates each point's feature-space neighbourhood into one row.
pub fn graph_aggregate(feats: &Tensor, k_graph: usize, ws: &WeightSet) -> Result<Tensor> {
    if feats.shape().len() != 2 || feats.rows() == 0 {
        return Err(Error::Shape(format!(
            "graph aggregation expects a non-empty n×F input, got {:?}",
            feats.shape()
        )));
    }
    if k_graph == 0 {
        return Err(Error::InvalidParams("k_graph must be at least 1".into()));
    }
    let n = feats.rows();
    let f = feats.cols();
    let transform = feature_transform(feats, ws)?;
    let aligned = right_multiply(feats.data(), f, transform.data(), f);
    let neighbors = feature_knn(&aligned, f, k_graph);

    let w0 = ws.get(&format!("{EDGE_MLP}.0.weight"))?;
    let b0 = ws.get(&format!("{EDGE_MLP}.0.bias"))?;
    let w1 = ws.get(&format!("{EDGE_MLP}.1.weight"))?;
    let b1 = ws.get(&format!("{EDGE_MLP}.1.bias"))?;
    if w0.rows() != 2 * f {
        return Err(Error::Shape(format!(
            "{EDGE_MLP}.0.weight takes {} inputs, edges have {}",
            w0.rows(),
            2 * f
        )));
    }
    let out_dim = w1.cols();
    let data = feats.data();

    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let pi = &data[i * f..(i + 1) * f];
            let self_edge = [i];
            let hood: &[usize] = if neighbors[i].is_empty() {
                &self_edge
            } else {
                &neighbors[i]
            };
            let mut edges = Vec::with_capacity(hood.len() * 2 * f);
            for &j in hood {
                let pj = &data[j * f..(j + 1) * f];
                edges.extend_from_slice(pi);
                edges.extend(pi.iter().zip(pj).map(|(a, b)| a - b));
            }
            let h = dense(&edges, 2 * f, w0, b0, true)?;
            let h = dense(&h, w0.cols(), w1, b1, true)?;
            let mut pooled = vec![f32::NEG_INFINITY; out_dim];
            for edge in h.chunks_exact(out_dim) {
                for (o, &v) in pooled.iter_mut().zip(edge) {
                    *o = o.max(v);
                }
            }
            Ok(pooled)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(vec![n, out_dim], rows.concat())
}
