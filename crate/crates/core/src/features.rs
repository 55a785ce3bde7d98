//! Per-point geometric features over k-nearest spatial neighbourhoods.
//!
//! Four values per point: the height range and height variance of the
//! neighbourhood, and from the eigenvalues `λ1 ≥ λ2` of the horizontal (x, y)
//! covariance the scattering `λ1 + λ2` and the ratio `λ2 / λ1`.

use rayon::prelude::*;

use crate::cloud::{Point3, SpatialIndex, Submap};
use crate::error::{Error, Result};

/// Default neighbourhood size, the query point included.
pub const DEFAULT_K_LOCAL: usize = 20;
/// Below this leading eigenvalue the ratio feature is reported as 0.
pub const EIGEN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointFeatures {
    pub dz_max: f64,
    pub z_var: f64,
    pub s2d: f64,
    pub l2d: f64,
}

impl PointFeatures {
    pub fn to_array(self) -> [f64; 4] {
        [self.dz_max, self.z_var, self.s2d, self.l2d]
    }
}

/// One row of features per submap point, in point order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalFeatures {
    pub rows: Vec<PointFeatures>,
}

impl LocalFeatures {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Height range and population variance of the neighbourhood.
pub fn z_stats(neighborhood: &[Point3]) -> Result<(f64, f64)> {
    if neighborhood.is_empty() {
        return Err(Error::EmptyInput("empty neighbourhood"));
    }
    let n = neighborhood.len() as f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for p in neighborhood {
        lo = lo.min(p.z);
        hi = hi.max(p.z);
        sum += p.z;
    }
    let mean = sum / n;
    let var = neighborhood
        .iter()
        .map(|p| (p.z - mean) * (p.z - mean))
        .sum::<f64>()
        / n;
    Ok((hi - lo, var))
}

/// Population covariance `(sxx, sxy, syy)` of the horizontal projection.
pub fn planar_covariance(neighborhood: &[Point3]) -> Result<(f64, f64, f64)> {
    if neighborhood.is_empty() {
        return Err(Error::EmptyInput("empty neighbourhood"));
    }
    let n = neighborhood.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in neighborhood {
        mx += p.x;
        my += p.y;
    }
    mx /= n;
    my /= n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in neighborhood {
        let dx = p.x - mx;
        let dy = p.y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    Ok((sxx / n, sxy / n, syy / n))
}

/// Eigenvalues of the symmetric matrix `[[a, b], [b, c]]`, largest first,
/// clamped at zero.
pub fn symmetric_eigen2(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let radius = half_diff.hypot(b);
    let l1 = (mean + radius).max(0.0);
    let l2 = (mean - radius).max(0.0);
    (l1, l2)
}

/// Descending eigenvalues of the horizontal covariance of the neighbourhood.
pub fn planar_eigen(neighborhood: &[Point3]) -> Result<(f64, f64)> {
    let (sxx, sxy, syy) = planar_covariance(neighborhood)?;
    Ok(symmetric_eigen2(sxx, sxy, syy))
}

/// Features of one neighbourhood.
pub fn neighborhood_features(neighborhood: &[Point3]) -> Result<PointFeatures> {
    let (dz_max, z_var) = z_stats(neighborhood)?;
    let (l1, l2) = planar_eigen(neighborhood)?;
    let l2d = if l1 < EIGEN_EPS { 0.0 } else { (l2 / l1).min(1.0) };
    Ok(PointFeatures {
        dz_max,
        z_var,
        s2d: l1 + l2,
        l2d,
    })
}

/// Computes features for every point; the neighbourhood of point `i` is `i`
/// itself plus its `k - 1` nearest other points.
pub fn local_features(submap: &Submap, k: usize) -> Result<LocalFeatures> {
    if k < 2 {
        return Err(Error::InvalidParams(format!(
            "local neighbourhood size must be at least 2, got {k}"
        )));
    }
    let index = SpatialIndex::new(&submap.points);
    let rows = (0..submap.points.len())
        .into_par_iter()
        .map(|i| {
            let p = submap.points[i];
            let hits = index.knn(p, k)?;
            let mut hood = Vec::with_capacity(k);
            hood.push(p);
            hood.extend(
                hits.iter()
                    .filter(|&&j| j != i)
                    .take(k - 1)
                    .map(|&j| submap.points[j]),
            );
            neighborhood_features(&hood)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalFeatures { rows })
}
