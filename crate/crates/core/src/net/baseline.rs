//! Weight-free descriptor: histograms of height and of the four local
//! features, plus a coarse bird's-eye grid of point occupancy and vertical
//! extent. Useful wherever trained weights are unavailable.

use crate::cloud::Submap;
use crate::descriptor::{GlobalDescriptor, DESCRIPTOR_DIM};
use crate::features::LocalFeatures;
use crate::error::{Error, Result};

const Z_BINS: usize = 32;
const FEATURE_BINS: usize = 24;
/// Cells per side of the bird's-eye grid over `[-1, 1]²`.
const GRID: usize = 8;

// Relative weight of each block after it is scaled to unit norm.
const Z_WEIGHT: f64 = 0.5;
const FEATURE_WEIGHT: f64 = 0.5;
const OCCUPANCY_WEIGHT: f64 = 1.0;
const EXTENT_WEIGHT: f64 = 1.0;

// (transform, upper bound) per feature column; lower bound is 0.
const FEATURE_RANGES: [(fn(f64) -> f64, f64); 4] = [
    (|v| v, 0.25),        // dz_max
    (f64::sqrt, 0.1),     // z_var as a standard deviation
    (f64::sqrt, 0.1),     // s2d as a planar spread
    (|v| v, 1.0),         // l2d
];

fn bin(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = (value - lo) / (hi - lo) * bins as f64;
    if t.is_nan() || t < 0.0 {
        0
    } else {
        (t as usize).min(bins - 1)
    }
}

fn scale_block(block: &mut [f64], weight: f64) {
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        block.iter_mut().for_each(|v| *v *= weight / norm);
    }
}

pub fn baseline_descriptor(submap: &Submap, lf: &LocalFeatures) -> Result<GlobalDescriptor> {
    if submap.len() != lf.len() {
        return Err(Error::Shape(format!(
            "{} points but {} feature rows",
            submap.len(),
            lf.len()
        )));
    }
    let mut hist = vec![0.0f64; DESCRIPTOR_DIM];
    let (z_hist, rest) = hist.split_at_mut(Z_BINS);
    let (feat_hist, rest) = rest.split_at_mut(4 * FEATURE_BINS);
    let (occupancy, extent) = rest.split_at_mut(GRID * GRID);

    let mut lo = [f64::INFINITY; GRID * GRID];
    let mut hi = [f64::NEG_INFINITY; GRID * GRID];
    for p in &submap.points {
        z_hist[bin(p.z, -1.0, 1.0, Z_BINS)] += 1.0;
        let cell = bin(p.y, -1.0, 1.0, GRID) * GRID + bin(p.x, -1.0, 1.0, GRID);
        occupancy[cell] += 1.0;
        lo[cell] = lo[cell].min(p.z);
        hi[cell] = hi[cell].max(p.z);
    }
    for (e, (l, h)) in extent.iter_mut().zip(lo.iter().zip(&hi)) {
        if h >= l {
            *e = h - l;
        }
    }
    for row in &lf.rows {
        for (c, (v, (f, top))) in row.to_array().into_iter().zip(FEATURE_RANGES).enumerate() {
            feat_hist[c * FEATURE_BINS + bin(f(v), 0.0, top, FEATURE_BINS)] += 1.0;
        }
    }
    scale_block(z_hist, Z_WEIGHT);
    scale_block(feat_hist, FEATURE_WEIGHT);
    scale_block(occupancy, OCCUPANCY_WEIGHT);
    scale_block(extent, EXTENT_WEIGHT);
    Ok(GlobalDescriptor::normalized(
        hist.into_iter().map(|c| c as f32).collect(),
    ))
}
