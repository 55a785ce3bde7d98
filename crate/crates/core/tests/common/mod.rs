//! Brute-force reference implementations used by the integration tests.
//! Each one is written from the definition, without calling the code under
//! test.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqlpd::seqmatch::{DifferenceMatrix, MatchParams};
use seqlpd::{GlobalDescriptor, PlaceMap, Point3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dist2_3(a: Point3, b: Point3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

/// The `k` smallest `(distance, index)` pairs in lexicographic order.
fn k_smallest(mut scored: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, by);
        scored.truncate(k);
    }
    scored.sort_by(by);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Exhaustive spatial kNN including the query point itself.
pub fn knn_oracle(points: &[Point3], query: Point3, k: usize) -> Vec<usize> {
    let scored = points.iter().enumerate().map(|(i, &p)| (dist2_3(p, query), i)).collect();
    k_smallest(scored, k)
}

/// Exhaustive feature-space kNN of every row, excluding the row itself.
pub fn feature_knn_oracle(rows: &[f32], dim: usize, k: usize) -> Vec<Vec<usize>> {
    let n = rows.len() / dim;
    (0..n)
        .map(|i| {
            let a = &rows[i * dim..(i + 1) * dim];
            let scored = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let b = &rows[j * dim..(j + 1) * dim];
                    let d: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
                    (d, j)
                })
                .collect();
            k_smallest(scored, k)
        })
        .collect()
}

/// Random cloud mixing continuous points, points on a coarse lattice and exact
/// duplicates so that distance ties occur.
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    let mut pts: Vec<Point3> = Vec::with_capacity(n);
    for i in 0..n {
        let p = match rng.gen_range(0..4) {
            0 if i > 0 => pts[rng.gen_range(0..i)],
            1 => Point3::new(
                rng.gen_range(-4..4) as f64 * 0.5,
                rng.gen_range(-4..4) as f64 * 0.5,
                rng.gen_range(-2..2) as f64 * 0.5,
            ),
            _ => Point3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-3.0..3.0),
            ),
        };
        pts.push(p);
    }
    pts
}

/// Velocity grid written out from its definition.
pub fn velocity_grid(p: &MatchParams) -> Vec<f64> {
    let mut v = Vec::new();
    let mut i = 0;
    loop {
        let x = p.v_min + i as f64 * p.v_step;
        if x > p.v_max + 1e-9 {
            break;
        }
        v.push(x);
        i += 1;
    }
    if p.bidirectional {
        let mut both: Vec<f64> = v.iter().rev().map(|x| -x).collect();
        both.extend(v);
        both
    } else {
        v
    }
}

/// `(ref_end, v, score, second_best)` by enumerating every `(ref_end, v)`.
pub fn search_oracle(m: &DifferenceMatrix, p: &MatchParams) -> Option<(usize, f64, f64, Option<f64>)> {
    let rows = m.rows();
    let grid = velocity_grid(p);
    let mut all: Vec<(usize, f64, f64)> = Vec::new();
    for e in 0..m.cols() {
        for &v in &grid {
            let mut sum = 0.0;
            let mut ok = true;
            for w in 0..p.window {
                let c = e as i64 - (v * w as f64).round() as i64;
                if c < 0 || c >= m.cols() as i64 {
                    ok = false;
                    break;
                }
                sum += m.get(rows - 1 - w, c as usize);
            }
            if ok {
                all.push((e, v, sum / p.window as f64));
            }
        }
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for &(e, v, s) in &all {
        let better = match best {
            None => true,
            Some((be, bv, bs)) => s < bs || (s == bs && (e < be || (e == be && v < bv))),
        };
        if better {
            best = Some((e, v, s));
        }
    }
    let (be, bv, bs) = best?;
    let second = all
        .iter()
        .filter(|(e, _, _)| (*e as i64 - be as i64).unsigned_abs() as usize > p.exclusion)
        .map(|x| x.2)
        .min_by(|a, b| a.partial_cmp(b).unwrap());
    Some((be, bv, bs, second))
}

pub fn l2_oracle(a: &GlobalDescriptor, b: &GlobalDescriptor) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Top-N map indices by full sort of L2 distances, ties to the lower index.
pub fn retrieval_oracle(q: &GlobalDescriptor, db: &PlaceMap, n: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = db
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| (l2_oracle(q, &e.descriptor), i))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|(_, i)| i).collect()
}

/// Recall@N percentage, or `None` when no query has a positive.
pub fn recall_oracle(
    queries: &[(GlobalDescriptor, seqlpd::Pose)],
    db: &PlaceMap,
    radius: f64,
    n: usize,
) -> Option<f64> {
    let mut evaluated = 0;
    let mut hits = 0;
    for (d, pose) in queries {
        let positives: Vec<usize> = db
            .entries()
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                let (dx, dy, dz) = (e.pose.x - pose.x, e.pose.y - pose.y, e.pose.z - pose.z);
                (dx * dx + dy * dy + dz * dz).sqrt() <= radius
            })
            .map(|(i, _)| i)
            .collect();
        if positives.is_empty() {
            continue;
        }
        evaluated += 1;
        if retrieval_oracle(d, db, n).iter().any(|i| positives.contains(i)) {
            hits += 1;
        }
    }
    (evaluated > 0).then(|| 100.0 * hits as f64 / evaluated as f64)
}

/// Lazy quadruplet loss straight from its hinge formula.
pub fn loss_oracle(
    anchor: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    neg_star: &[f64],
    alpha: f64,
    beta: f64,
) -> f64 {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let pos = positives.iter().map(|p| d(anchor, p)).fold(f64::INFINITY, f64::min);
    let mut first = 0.0f64;
    let mut second = 0.0f64;
    for n in negatives {
        first = first.max((alpha + pos - d(anchor, n)).max(0.0));
        second = second.max((beta + pos - d(neg_star, n)).max(0.0));
    }
    first + second
}
