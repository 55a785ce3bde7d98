//! Descriptor-space clustering and super keyframe selection.
//!
//! Clusters come from K-means++ seeding followed by Lloyd iterations. The
//! cluster count is picked at the elbow of the distortion curve and then
//! raised until every descriptor lies closer than `D` to its center. Each
//! cluster keeps the member nearest its center as the super keyframe, plus a
//! KD-tree over the member descriptors.
//!
//! The `LPDC` file (little-endian): magic `LPDC`, `u32` version (1), `u32` K,
//! `f32` D, per cluster a `u32` keyframe entry index, a `u32` member count and
//! the `u32` member indices, then K centers of `f32`. Trees are rebuilt on load.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptor::GlobalDescriptor;
use crate::error::{Error, Result};
use crate::io::Reader;
use crate::kdtree::{squared_distance, KdTree, Neighbor};

const MAGIC: &[u8; 4] = b"LPDC";
const VERSION: u32 = 1;
/// Seeded restarts per candidate K; the lowest distortion wins.
pub const RESTARTS: u64 = 3;
pub const DEFAULT_ITERS_MAX: usize = 100;

/// Result of one K-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centers: Vec<Vec<f64>>,
    /// Cluster id per descriptor.
    pub assignment: Vec<usize>,
    /// Sum of squared distances from each descriptor to its center.
    pub distortion: f64,
    /// Distortion after every assignment step, first to last.
    pub history: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Entry indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == c)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    /// Largest distance from a descriptor to its own center.
    pub fn max_radius(&self, descriptors: &[GlobalDescriptor]) -> f64 {
        let rows = to_rows(descriptors);
        rows.iter()
            .zip(&self.assignment)
            .map(|(r, &a)| squared_distance(r, &self.centers[a]).sqrt())
            .fold(0.0, f64::max)
    }
}

fn to_rows(descriptors: &[GlobalDescriptor]) -> Vec<Vec<f64>> {
    descriptors.iter().map(GlobalDescriptor::to_f64).collect()
}

fn check_dims(descriptors: &[GlobalDescriptor]) -> Result<usize> {
    let dim = descriptors
        .first()
        .ok_or(Error::EmptyInput("no descriptors to cluster"))?
        .dim();
    if let Some(bad) = descriptors.iter().find(|d| d.dim() != dim) {
        return Err(Error::Dimension(dim, bad.dim()));
    }
    Ok(dim)
}

fn nearest_center(row: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(row, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centers(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centers = vec![rows[first].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| squared_distance(r, &rows[first])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight has a positive entry")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        for (w, r) in d2.iter_mut().zip(rows) {
            *w = w.min(squared_distance(r, &rows[pick]));
        }
        centers.push(rows[pick].clone());
    }
    centers
}

/// Nearest-center assignment with empty clusters repaired: an empty cluster
/// takes over the point farthest from its own center among clusters that can
/// spare one, and is re-centered on it. Returns the distortion.
fn assign(rows: &[Vec<f64>], centers: &mut [Vec<f64>], assignment: &mut [usize]) -> f64 {
    let nearest: Vec<(usize, f64)> = rows
        .par_iter()
        .map(|r| nearest_center(r, centers))
        .collect();
    let k = centers.len();
    let mut sizes = vec![0usize; k];
    let mut cost: Vec<f64> = Vec::with_capacity(rows.len());
    for (i, &(c, d)) in nearest.iter().enumerate() {
        assignment[i] = c;
        sizes[c] += 1;
        cost.push(d);
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut donor: Option<usize> = None;
        for i in 0..rows.len() {
            if sizes[assignment[i]] > 1 && donor.map_or(true, |j| cost[i] > cost[j]) {
                donor = Some(i);
            }
        }
        let i = donor.expect("K <= N leaves a cluster with a spare member");
        sizes[assignment[i]] -= 1;
        assignment[i] = c;
        sizes[c] = 1;
        centers[c] = rows[i].clone();
        cost[i] = 0.0;
    }
    cost.iter().sum()
}

fn means(rows: &[Vec<f64>], assignment: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (r, &a) in rows.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(r) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        let inv = 1.0 / n as f64;
        s.iter_mut().for_each(|v| *v *= inv);
    }
    sums
}

fn lloyd(rows: &[Vec<f64>], mut centers: Vec<Vec<f64>>, iters_max: usize) -> Clustering {
    let k = centers.len();
    let dim = rows[0].len();
    let mut assignment = vec![0usize; rows.len()];
    let mut distortion = assign(rows, &mut centers, &mut assignment);
    let mut history = vec![distortion];
    for _ in 0..iters_max {
        let mut next_centers = means(rows, &assignment, k, dim);
        let mut next = vec![0usize; rows.len()];
        distortion = assign(rows, &mut next_centers, &mut next);
        history.push(distortion);
        centers = next_centers;
        let converged = next == assignment;
        assignment = next;
        if converged {
            break;
        }
    }
    Clustering {
        centers,
        assignment,
        distortion,
        history,
    }
}

/// K-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `iters_max` updates have run.
pub fn kmeanspp(
    descriptors: &[GlobalDescriptor],
    k: usize,
    seed: u64,
    iters_max: usize,
) -> Result<Clustering> {
    let n = descriptors.len();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    check_dims(descriptors)?;
    let rows = to_rows(descriptors);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = seed_centers(&rows, k, &mut rng);
    Ok(lloyd(&rows, centers, iters_max))
}

fn restart_seed(seed: u64, k: usize, restart: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((k as u64) << 8 | restart)
}

/// Tunables for [`elbow_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    /// Every descriptor must lie strictly closer than this to its center.
    pub d: f64,
    pub k_max: usize,
    pub iters_max: usize,
    pub seed: u64,
}

impl ClusterParams {
    pub fn new(d: f64, k_max: usize) -> Self {
        ClusterParams {
            d,
            k_max,
            iters_max: DEFAULT_ITERS_MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElbowSelection {
    pub k: usize,
    /// K at the elbow, before the distance constraint was applied.
    pub elbow_k: usize,
    pub clustering: Clustering,
    /// Best distortion for K = 1..=k_max.
    pub curve: Vec<f64>,
    /// False when K hit `k_max` with descriptors still at or beyond `D`.
    pub constraint_satisfied: bool,
}

/// Best-of-restarts clustering for a fixed K.
pub fn best_clustering(
    descriptors: &[GlobalDescriptor],
    k: usize,
    seed: u64,
    iters_max: usize,
) -> Result<Clustering> {
    let mut best: Option<Clustering> = None;
    for r in 0..RESTARTS {
        let c = kmeanspp(descriptors, k, restart_seed(seed, k, r), iters_max)?;
        if best.as_ref().map_or(true, |b| c.distortion < b.distortion) {
            best = Some(c);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Index (into `curve`, 0-based for K = 1) of the largest discrete second
/// difference, or `None` when the curve has no positive curvature.
pub fn elbow_index(curve: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 1..curve.len().saturating_sub(1) {
        let bend = curve[i - 1] - 2.0 * curve[i] + curve[i + 1];
        if bend > 0.0 && best.map_or(true, |(_, b)| bend > b) {
            best = Some((i, bend));
        }
    }
    best.map(|(i, _)| i)
}

/// Chooses K by the elbow of the distortion curve, then grows K until the
/// distance constraint holds or `k_max` is reached. `k_max` above the number
/// of descriptors is lowered to it.
pub fn elbow_select(
    descriptors: &[GlobalDescriptor],
    params: &ClusterParams,
) -> Result<ElbowSelection> {
    if !(params.d > 0.0) || !params.d.is_finite() {
        return Err(Error::InvalidParams(format!(
            "distance threshold D must be positive, got {}",
            params.d
        )));
    }
    if params.k_max == 0 {
        return Err(Error::InvalidParams("K_max must be at least 1".into()));
    }
    check_dims(descriptors)?;
    let k_max = params.k_max.min(descriptors.len());

    let runs: Vec<Clustering> = (1..=k_max)
        .map(|k| best_clustering(descriptors, k, params.seed, params.iters_max))
        .collect::<Result<_>>()?;
    let curve: Vec<f64> = runs.iter().map(|c| c.distortion).collect();

    let elbow_k = if curve[0] <= 0.0 {
        1
    } else {
        elbow_index(&curve).map_or(1, |i| i + 1)
    };
    let mut k = elbow_k;
    while k < k_max && runs[k - 1].max_radius(descriptors) >= params.d {
        k += 1;
    }
    let clustering = runs[k - 1].clone();
    let constraint_satisfied = clustering.max_radius(descriptors) < params.d;
    Ok(ElbowSelection {
        k,
        elbow_k,
        clustering,
        curve,
        constraint_satisfied,
    })
}

/// One cluster's typical place and member index.
#[derive(Debug, Clone)]
pub struct ClusterIndex {
    /// Entry index of the super keyframe.
    pub keyframe: usize,
    /// Entry indices, ascending.
    pub members: Vec<usize>,
    tree: KdTree,
}

/// Super keyframes and per-cluster descriptor trees.
#[derive(Debug, Clone)]
pub struct SuperKeyframes {
    clusters: Vec<ClusterIndex>,
    centers: Vec<Vec<f64>>,
    keyframe_rows: Vec<Vec<f64>>,
}

fn build_index(rows: &[Vec<f64>], keyframe: usize, members: Vec<usize>) -> ClusterIndex {
    let dim = rows.first().map_or(1, Vec::len);
    let coords = members.iter().flat_map(|&m| rows[m].iter().copied()).collect();
    ClusterIndex {
        keyframe,
        members,
        tree: KdTree::new(dim, coords),
    }
}

/// Picks the member nearest each center (ties to the lower entry index) and
/// indexes every cluster.
pub fn super_keyframes(
    descriptors: &[GlobalDescriptor],
    clustering: &Clustering,
) -> Result<SuperKeyframes> {
    if clustering.assignment.len() != descriptors.len() {
        return Err(Error::LengthMismatch(format!(
            "{} descriptors but {} assignments",
            descriptors.len(),
            clustering.assignment.len()
        )));
    }
    let rows = to_rows(descriptors);
    let mut clusters = Vec::with_capacity(clustering.k());
    for (c, center) in clustering.centers.iter().enumerate() {
        let members = clustering.members(c);
        let keyframe = members
            .iter()
            .map(|&m| (m, squared_distance(&rows[m], center)))
            .fold(None, |best: Option<(usize, f64)>, (m, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((m, d)),
            })
            .map(|(m, _)| m)
            .ok_or_else(|| Error::InvalidParams(format!("cluster {c} has no members")))?;
        clusters.push(build_index(&rows, keyframe, members));
    }
    let keyframe_rows = clusters.iter().map(|c| rows[c.keyframe].clone()).collect();
    Ok(SuperKeyframes {
        clusters,
        centers: clustering.centers.clone(),
        keyframe_rows,
    })
}

impl SuperKeyframes {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn cluster(&self, c: usize) -> Result<&ClusterIndex> {
        self.clusters.get(c).ok_or(Error::InvalidCluster(c))
    }

    pub fn clusters(&self) -> &[ClusterIndex] {
        &self.clusters
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Descriptor of cluster `c`'s keyframe, widened to `f64`.
    pub fn keyframe_row(&self, c: usize) -> &[f64] {
        &self.keyframe_rows[c]
    }

    /// The `m` members of cluster `c` nearest to `query`, nearest first.
    pub fn nearest_in_cluster(
        &self,
        c: usize,
        query: &GlobalDescriptor,
        m: usize,
    ) -> Result<Vec<Neighbor>> {
        let cluster = self.cluster(c)?;
        if m == 0 {
            return Err(Error::InvalidParams("m must be at least 1".into()));
        }
        if query.dim() != cluster.tree.dim() {
            return Err(Error::Dimension(cluster.tree.dim(), query.dim()));
        }
        Ok(cluster
            .tree
            .knn(&query.to_f64(), m)
            .into_iter()
            .map(|n| Neighbor {
                index: cluster.members[n.index],
                dist2: n.dist2,
            })
            .collect())
    }

    pub fn to_bytes(&self, d: f64) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.clusters.len() as u32).to_le_bytes());
        out.extend_from_slice(&(d as f32).to_le_bytes());
        for c in &self.clusters {
            out.extend_from_slice(&(c.keyframe as u32).to_le_bytes());
            out.extend_from_slice(&(c.members.len() as u32).to_le_bytes());
            for &m in &c.members {
                out.extend_from_slice(&(m as u32).to_le_bytes());
            }
        }
        for center in &self.centers {
            for &v in center {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parses an `LPDC` file against the descriptors it was built from.
    /// Returns the keyframes and the stored `D`.
    pub fn from_bytes(bytes: &[u8], descriptors: &[GlobalDescriptor]) -> Result<(Self, f32)> {
        let mut r = Reader::new(bytes, "cluster file");
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let k = r.u32()? as usize;
        let d = r.f32()?;
        if k == 0 {
            return Err(Error::Format("cluster file: no clusters".into()));
        }
        let n = descriptors.len();
        let mut layout = Vec::with_capacity(k);
        for c in 0..k {
            let keyframe = r.u32()? as usize;
            let count = r.u32()? as usize;
            let mut members = Vec::with_capacity(count.min(n));
            for _ in 0..count {
                members.push(r.u32()? as usize);
            }
            let ascending = members.windows(2).all(|w| w[0] < w[1]);
            if members.is_empty()
                || !ascending
                || members.last().is_some_and(|&m| m >= n)
                || members.binary_search(&keyframe).is_err()
            {
                return Err(Error::Format(format!(
                    "cluster file: cluster {c} is inconsistent with a map of {n} entries"
                )));
            }
            layout.push((keyframe, members));
        }
        let rest = r.remaining();
        if rest % (4 * k) != 0 {
            return Err(Error::Format(format!(
                "cluster file: {rest} center bytes do not split into {k} centers"
            )));
        }
        let dim = rest / (4 * k);
        if descriptors.first().is_some_and(|x| x.dim() != dim) {
            return Err(Error::Format(format!(
                "cluster file: centers are {dim}-d but the map is {}-d",
                descriptors[0].dim()
            )));
        }
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| Ok(r.f32_vec(dim)?.into_iter().map(f64::from).collect()))
            .collect::<Result<_>>()?;
        r.finish()?;

        let rows = to_rows(descriptors);
        let clusters: Vec<ClusterIndex> = layout
            .into_iter()
            .map(|(kf, members)| build_index(&rows, kf, members))
            .collect();
        let keyframe_rows = clusters.iter().map(|c| rows[c.keyframe].clone()).collect();
        Ok((
            SuperKeyframes {
                clusters,
                centers,
                keyframe_rows,
            },
            d,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>, d: f64) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes(d)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, descriptors: &[GlobalDescriptor]) -> Result<(Self, f32)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, descriptors)
    }
}
