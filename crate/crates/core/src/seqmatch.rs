//! Coarse-to-fine loop detection.
//!
//! The newest query descriptor first picks a cluster by its nearest super
//! keyframe. Reference frames around every member of that cluster are then
//! searched with straight trajectories through the query/reference
//! difference matrix: the newest query row is pinned to a candidate
//! reference frame and earlier rows step back `round(v · w)` columns for each
//! velocity `v` on a fixed grid. The lowest mean difference wins, and the
//! match is accepted when it beats the best score outside an exclusion zone
//! by the configured ratio.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::cluster::SuperKeyframes;
use crate::descriptor::{l2, squared_l2, GlobalDescriptor};
use crate::error::{Error, Result};
use crate::kdtree::squared_distance;
use crate::placemap::{PlaceEntry, PlaceMap};

/// Pairwise L2 distances, rows = query frames (oldest first), columns =
/// reference frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DifferenceMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch(format!(
                "{rows}×{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyInput("difference matrix has no cells"));
        }
        Ok(DifferenceMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Plain-text PGM (`P2`). Distances in `[0, 2]` map linearly onto gray
    /// levels `[0, 255]`, so similar frames are dark.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.cols, self.rows);
        for r in 0..self.rows {
            let line: Vec<String> = self
                .row(r)
                .iter()
                .map(|&d| gray_level(d).to_string())
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            for (c, d) in self.row(r).iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                write!(out, "{d}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Gray level of one distance in the PGM export.
pub fn gray_level(distance: f64) -> u8 {
    (distance.clamp(0.0, 2.0) * 127.5).round() as u8
}

pub fn difference_matrix(
    query: &[GlobalDescriptor],
    reference: &[GlobalDescriptor],
) -> Result<DifferenceMatrix> {
    if query.is_empty() || reference.is_empty() {
        return Err(Error::EmptyInput("difference matrix needs query and reference frames"));
    }
    let data = query
        .par_iter()
        .map(|q| {
            reference
                .iter()
                .map(|r| l2(q, r))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    DifferenceMatrix::new(query.len(), reference.len(), data)
}

/// Sequence search settings. Velocities are reference frames advanced per
/// query frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchParams {
    pub window: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub v_step: f64,
    /// A match is accepted when `best < accept_ratio · second_best`.
    pub accept_ratio: f64,
    /// Reference frames within this radius of the best match are ignored when
    /// looking for the second best.
    pub exclusion: usize,
    /// Also search trajectories that run backwards through the reference.
    pub bidirectional: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self::with_window(10)
    }
}

impl MatchParams {
    /// Defaults for a given window; the exclusion radius is twice the window.
    pub fn with_window(window: usize) -> Self {
        MatchParams {
            window,
            v_min: 0.8,
            v_max: 1.2,
            v_step: 0.1,
            accept_ratio: 0.8,
            exclusion: 2 * window,
            bidirectional: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.window >= 1
            && self.v_min > 0.0
            && self.v_min <= self.v_max
            && self.v_max.is_finite()
            && self.v_step > 0.0
            && self.accept_ratio > 0.0
            && self.accept_ratio < 1.0;
        if !ok {
            return Err(Error::InvalidParams(format!("invalid match parameters {self:?}")));
        }
        Ok(())
    }

    /// Velocity grid `v_min, v_min + v_step, …, ≤ v_max`, ascending; negated
    /// copies come first when searching both directions.
    pub fn velocities(&self) -> Vec<f64> {
        let steps = ((self.v_max - self.v_min) / self.v_step + 1e-9).floor() as usize;
        let forward: Vec<f64> = (0..=steps)
            .map(|i| self.v_min + i as f64 * self.v_step)
            .collect();
        if self.bidirectional {
            forward.iter().rev().map(|v| -v).chain(forward.iter().copied()).collect()
        } else {
            forward
        }
    }

    /// Columns the trajectory reaches behind (and, bidirectionally, ahead of)
    /// its end column.
    fn span(&self) -> usize {
        self.velocities()
            .iter()
            .map(|v| (v.abs() * (self.window - 1) as f64).round() as usize)
            .max()
            .unwrap_or(0)
    }
}

#[inline]
fn column_at(ref_end: usize, v: f64, w: usize) -> i64 {
    ref_end as i64 - (v * w as f64).round() as i64
}

/// Mean difference along the trajectory ending at `(last row, ref_end)`.
pub fn trajectory_score(m: &DifferenceMatrix, ref_end: usize, v: f64, window: usize) -> Result<f64> {
    if window == 0 || window > m.rows {
        return Err(Error::WindowTooLarge {
            window,
            rows: m.rows,
        });
    }
    let last = m.rows - 1;
    let mut sum = 0.0;
    for w in 0..window {
        let col = column_at(ref_end, v, w);
        if col < 0 || col >= m.cols as i64 {
            return Err(Error::OutOfBounds);
        }
        sum += m.get(last - w, col as usize);
    }
    Ok(sum / window as f64)
}

/// Best `(velocity, score)` for one end column, ties to the lower velocity.
fn best_for_end(m: &DifferenceMatrix, ref_end: usize, velocities: &[f64], window: usize) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &v in velocities {
        if let Ok(s) = trajectory_score(m, ref_end, v, window) {
            if best.map_or(true, |(_, b)| s < b) {
                best = Some((v, s));
            }
        }
    }
    best
}

/// Outcome of a sequence search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub ref_end: usize,
    pub velocity: f64,
    pub score: f64,
    /// Lowest score among end columns outside the exclusion zone.
    pub second_best: Option<f64>,
}

/// Picks the best candidate (ties to the lower end column) and the runner-up
/// outside the exclusion zone. `candidates` must be sorted by end column.
fn reduce(candidates: &[(usize, f64, f64)], exclusion: usize) -> Option<SearchResult> {
    let mut best: Option<(usize, f64, f64)> = None;
    for &c in candidates {
        if best.map_or(true, |b| c.2 < b.2) {
            best = Some(c);
        }
    }
    let (ref_end, velocity, score) = best?;
    let second_best = candidates
        .iter()
        .filter(|c| c.0.abs_diff(ref_end) > exclusion)
        .map(|c| c.2)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.min(s))));
    Some(SearchResult {
        ref_end,
        velocity,
        score,
        second_best,
    })
}

fn scan(
    m: &DifferenceMatrix,
    ends: std::ops::Range<usize>,
    velocities: &[f64],
    window: usize,
) -> Vec<(usize, f64, f64)> {
    ends.into_par_iter()
        .filter_map(|e| best_for_end(m, e, velocities, window).map(|(v, s)| (e, v, s)))
        .collect()
}

/// Exhaustive search over every in-bounds end column and velocity.
pub fn sequence_search(m: &DifferenceMatrix, params: &MatchParams) -> Result<SearchResult> {
    params.validate()?;
    if params.window > m.rows {
        return Err(Error::WindowTooLarge {
            window: params.window,
            rows: m.rows,
        });
    }
    let candidates = scan(m, 0..m.cols, &params.velocities(), params.window);
    reduce(&candidates, params.exclusion).ok_or(Error::NoValidTrajectory)
}

/// Cluster whose super keyframe is nearest to `query`, ties to the lower id.
pub fn coarse_match(query: &GlobalDescriptor, skf: &SuperKeyframes) -> Result<usize> {
    if skf.is_empty() {
        return Err(Error::EmptySuperKeyframes);
    }
    let q = query.to_f64();
    let mut best = (0, f64::INFINITY);
    for c in 0..skf.len() {
        let row = skf.keyframe_row(c);
        if row.len() != q.len() {
            return Err(Error::Dimension(row.len(), q.len()));
        }
        let d = squared_distance(&q, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    Ok(best.0)
}

/// A loop-closure decision for one query window.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Map entry index matched to the newest query frame.
    pub ref_end: usize,
    pub frame_id: u64,
    pub velocity: f64,
    pub score: f64,
    pub second_best: Option<f64>,
    pub accepted: bool,
    pub cluster_id: usize,
}

/// Maximal runs `[start, end]` (inclusive) of map entries within `window`
/// frames of a member of `cluster`.
pub fn candidate_runs(
    skf: &SuperKeyframes,
    cluster: usize,
    map_len: usize,
    window: usize,
) -> Result<Vec<(usize, usize)>> {
    let mut mark = vec![false; map_len];
    for &m in &skf.cluster(cluster)?.members {
        if m >= map_len {
            return Err(Error::InvalidParams(format!(
                "cluster member {m} is outside a map of {map_len} entries"
            )));
        }
        let lo = m.saturating_sub(window);
        let hi = (m + window).min(map_len - 1);
        mark[lo..=hi].iter_mut().for_each(|x| *x = true);
    }
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &on) in mark.iter().chain(std::iter::once(&false)).enumerate() {
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    Ok(runs)
}

/// Difference matrix of a query window against a slice of map entries.
fn window_matrix(query_window: &[GlobalDescriptor], reference: &[PlaceEntry]) -> Result<DifferenceMatrix> {
    let mut data = Vec::with_capacity(query_window.len() * reference.len());
    for q in query_window {
        for r in reference {
            let r = &r.descriptor;
            if q.dim() != r.dim() {
                return Err(Error::Dimension(r.dim(), q.dim()));
            }
            data.push(squared_l2(q.as_slice(), r.as_slice()).sqrt());
        }
    }
    DifferenceMatrix::new(query_window.len(), reference.len(), data)
}

/// Coarse-to-fine match of the last `window` query descriptors against the
/// historical map.
///
/// End columns are restricted to the candidate runs around the matched
/// cluster's members; trajectories may reach back (or ahead, when searching
/// both directions) past the start of a run. The runner-up for the ratio
/// test comes from the candidate runs, or from the whole map when no
/// candidate lies outside the exclusion zone.
pub fn detect_loop(
    query_window: &[GlobalDescriptor],
    map: &PlaceMap,
    skf: &SuperKeyframes,
    params: &MatchParams,
) -> Result<MatchResult> {
    params.validate()?;
    if query_window.len() != params.window {
        return Err(Error::LengthMismatch(format!(
            "query window has {} frames, expected {}",
            query_window.len(),
            params.window
        )));
    }
    if map.is_empty() {
        return Err(Error::EmptyInput("place map is empty"));
    }
    let newest = query_window.last().expect("window is non-empty");
    let cluster_id = coarse_match(newest, skf)?;
    let runs = candidate_runs(skf, cluster_id, map.len(), params.window)?;

    let velocities = params.velocities();
    let span = params.span();
    let ahead = if params.bidirectional { span } else { 0 };
    let entries = map.entries();
    let mut candidates = Vec::new();
    for (start, end) in runs {
        let first_col = start.saturating_sub(span);
        let last_col = (end + ahead).min(map.len() - 1);
        let m = window_matrix(query_window, &entries[first_col..=last_col])?;
        let local = scan(&m, (start - first_col)..(end - first_col + 1), &velocities, params.window);
        candidates.extend(local.into_iter().map(|(e, v, s)| (e + first_col, v, s)));
    }

    let mut found = reduce(&candidates, params.exclusion)
        .ok_or(Error::InsufficientHistory(params.window))?;
    if found.second_best.is_none() {
        // The candidate runs lie inside the exclusion zone; compare against
        // the rest of the map instead.
        let m = window_matrix(query_window, entries)?;
        found.second_best = scan(&m, 0..entries.len(), &velocities, params.window)
            .into_iter()
            .filter(|c| c.0.abs_diff(found.ref_end) > params.exclusion)
            .map(|c| c.2)
            .reduce(f64::min);
    }
    let accepted = found
        .second_best
        .is_some_and(|s| found.score < params.accept_ratio * s);
    Ok(MatchResult {
        ref_end: found.ref_end,
        frame_id: entries[found.ref_end].frame_id,
        velocity: found.velocity,
        score: found.score,
        second_best: found.second_best,
        accepted,
        cluster_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted() -> DifferenceMatrix {
        let mut data = vec![1.0; 5 * 20];
        for (r, c) in [(4, 12), (3, 11), (2, 10), (1, 9), (0, 8)] {
            data[r * 20 + c] = 0.0;
        }
        DifferenceMatrix::new(5, 20, data).unwrap()
    }

    fn unit(dim: usize, i: usize) -> GlobalDescriptor {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        GlobalDescriptor::from_vec(v)
    }

    #[test]
    fn orthonormal_differences() {
        let q = [unit(3, 0), unit(3, 1), unit(3, 2)];
        let r = [unit(3, 0), unit(3, 2), unit(3, 1)];
        let m = difference_matrix(&q, &r).unwrap();
        let s = 2f64.sqrt();
        let expected = [[0.0, s, s], [s, s, 0.0], [s, 0.0, s]];
        for (a, row) in expected.iter().enumerate() {
            for (b, &e) in row.iter().enumerate() {
                assert_eq!(m.get(a, b), e);
            }
        }
        assert!(difference_matrix(&[], &r).is_err());
    }

    #[test]
    fn trajectory_scores() {
        let m = planted();
        assert_eq!(trajectory_score(&m, 12, 1.0, 5).unwrap(), 0.0);
        assert_eq!(trajectory_score(&m, 7, 0.8, 1).unwrap(), m.get(4, 7));
        assert!(matches!(trajectory_score(&m, 2, 1.0, 5), Err(Error::OutOfBounds)));
        assert!(matches!(
            trajectory_score(&m, 12, 1.0, 6),
            Err(Error::WindowTooLarge { .. })
        ));
        let ones = DifferenceMatrix::new(3, 6, vec![1.0; 18]).unwrap();
        assert_eq!(trajectory_score(&ones, 5, 1.2, 3).unwrap(), 1.0);
    }

    #[test]
    fn search_finds_planted_diagonal() {
        let params = MatchParams::with_window(5);
        let found = sequence_search(&planted(), &params).unwrap();
        // Over five rows v = 0.9 steps back 0,1,2,3,4 columns just like v = 1;
        // the tie goes to the slower velocity.
        assert_eq!(found.ref_end, 12);
        assert_eq!(found.score, 0.0);
        assert!((found.velocity - 0.9).abs() < 1e-12);
        assert_eq!(found.second_best, None);
    }

    #[test]
    fn constant_matrix_takes_first_in_bounds_end() {
        let m = DifferenceMatrix::new(5, 20, vec![0.5; 100]).unwrap();
        let found = sequence_search(&m, &MatchParams::with_window(5)).unwrap();
        // round(0.8 · 4) = 3 columns back is the shortest reach.
        assert_eq!(found.ref_end, 3);
        assert_eq!(found.velocity, 0.8);
        assert_eq!(found.score, 0.5);
        assert!(matches!(
            sequence_search(&m, &MatchParams::with_window(6)),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn velocity_grid() {
        let p = MatchParams::default();
        let v = p.velocities();
        assert_eq!(v.len(), 5);
        assert_eq!(v[0], 0.8);
        assert!((v[4] - 1.2).abs() < 1e-12);
        let both = MatchParams {
            bidirectional: true,
            ..p
        }
        .velocities();
        assert_eq!(both.len(), 10);
        assert!(both.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn pgm_dark_means_similar() {
        assert_eq!(gray_level(0.0), 0);
        assert_eq!(gray_level(2.0), 255);
        assert_eq!(gray_level(1.0), 128);
        let pgm = planted().to_pgm();
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("20 5"));
        assert_eq!(lines.next(), Some("255"));
        let row4: Vec<u8> = lines.nth(4).unwrap().split(' ').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row4[12], 0);
        assert_eq!(row4[0], 128);
    }

    #[test]
    fn runner_up_falls_back_to_whole_map() {
        use crate::cluster::{kmeanspp, super_keyframes};
        use crate::synth::{synthetic_loop, LoopParams};

        // Four contiguous 15-place segments of distinct types: each cluster's
        // candidate runs fit inside the exclusion zone of a match in it.
        let lp = synthetic_loop(&LoopParams::new(60, 11), 0.0).unwrap();
        let descs = lp.map.descriptors();
        let skf = super_keyframes(&descs, &kmeanspp(&descs, 4, 1, 100).unwrap()).unwrap();
        let params = MatchParams::default();
        let window = &descs[28..38];
        let m = detect_loop(window, &lp.map, &skf, &params).unwrap();
        let full = sequence_search(&difference_matrix(window, &descs).unwrap(), &params).unwrap();
        assert_eq!((m.ref_end, m.score), (37, 0.0));
        let members = &skf.cluster(m.cluster_id).unwrap().members;
        assert!(members.iter().all(|&i| (30..45).contains(&i)), "{members:?}");
        assert_eq!(m.second_best, full.second_best);
        assert!(m.accepted);
    }
}
