//! NetVLAD pooling: soft assignment of every row to learned centers,
//! per-center residual sums, intra-normalization, a linear projection and a
//! final L2 normalization.

use rayon::prelude::*;

use super::layers::dense;
use super::tensor::{Tensor, WeightSet};
use crate::descriptor::GlobalDescriptor;
use crate::error::{Error, Result};

pub const ASSIGN_WEIGHT: &str = "netvlad.assign.weight";
pub const ASSIGN_BIAS: &str = "netvlad.assign.bias";
pub const CENTERS: &str = "netvlad.centers";
pub const PROJECTION_WEIGHT: &str = "projection.weight";
pub const PROJECTION_BIAS: &str = "projection.bias";

pub fn netvlad(feats: &Tensor, ws: &WeightSet) -> Result<GlobalDescriptor> {
    if feats.shape().len() != 2 || feats.rows() == 0 {
        return Err(Error::Shape(format!(
            "NetVLAD expects a non-empty n×D input, got {:?}",
            feats.shape()
        )));
    }
    let n = feats.rows();
    let d = feats.cols();
    let centers = ws.get(CENTERS)?;
    let clusters = centers.rows();
    if centers.shape() != [clusters, d] {
        return Err(Error::Shape(format!(
            "{CENTERS} has shape {:?}, features are {d}-wide",
            centers.shape()
        )));
    }

    let logits = dense(feats.data(), d, ws.get(ASSIGN_WEIGHT)?, ws.get(ASSIGN_BIAS)?, false)?;
    if logits.len() != n * clusters {
        return Err(Error::Shape(format!(
            "{ASSIGN_WEIGHT} must produce {clusters} logits per row"
        )));
    }
    let assign: Vec<f64> = logits
        .par_chunks(clusters)
        .flat_map_iter(|row| {
            let top = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(move |e| e / total)
        })
        .collect();

    let x = feats.data();
    let c = centers.data();
    let vlad: Vec<f32> = (0..clusters)
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut acc = vec![0.0f64; d];
            let mut mass = 0.0f64;
            for i in 0..n {
                let a = assign[i * clusters + k];
                mass += a;
                for (s, &v) in acc.iter_mut().zip(&x[i * d..(i + 1) * d]) {
                    *s += a * v as f64;
                }
            }
            for (s, &cv) in acc.iter_mut().zip(&c[k * d..(k + 1) * d]) {
                *s -= mass * cv as f64;
            }
            let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for s in acc.iter_mut() {
                    *s /= norm;
                }
            }
            acc.into_iter().map(|v| v as f32)
        })
        .collect();

    let projected = dense(
        &vlad,
        clusters * d,
        ws.get(PROJECTION_WEIGHT)?,
        ws.get(PROJECTION_BIAS)?,
        false,
    )?;
    Ok(GlobalDescriptor::normalized(projected))
}
