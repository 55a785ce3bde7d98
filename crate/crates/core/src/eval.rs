//! Retrieval metrics: Recall@N against a place map with pose-radius ground
//! truth, and the five-frame sequence protocol.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::cloud::Pose;
use crate::descriptor::{squared_l2, GlobalDescriptor};
use crate::error::{Error, Result};
use crate::placemap::PlaceMap;

/// Frames per run in the sequence protocol.
pub const RUN_LENGTH: usize = 5;
pub const DEFAULT_MIN_SUCCESSES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub descriptor: GlobalDescriptor,
    pub pose: Pose,
}

impl Query {
    pub fn new(descriptor: GlobalDescriptor, pose: Pose) -> Self {
        Query { descriptor, pose }
    }
}

/// N used for Recall@1%.
pub fn one_percent_n(db_len: usize) -> usize {
    ((db_len as f64 * 0.01).ceil() as usize).max(1)
}

/// Map entries whose pose lies within `gt_radius` of `pose`.
pub fn positives(pose: &Pose, db: &PlaceMap, gt_radius: f64) -> Vec<usize> {
    db.entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.pose.distance(pose) <= gt_radius)
        .map(|(i, _)| i)
        .collect()
}

/// Indices of the `n` nearest map descriptors, nearest first, ties to the
/// lower index.
pub fn top_n(query: &GlobalDescriptor, db: &PlaceMap, n: usize) -> Vec<usize> {
    let q = query.as_slice();
    let mut scored: Vec<(f64, usize)> = db
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| (squared_l2(q, e.descriptor.as_slice()), i))
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let n = n.min(scored.len());
    if n < scored.len() {
        scored.select_nth_unstable_by(n, by);
        scored.truncate(n);
    }
    scored.sort_unstable_by(by);
    scored.into_iter().map(|(_, i)| i).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recall {
    pub n: usize,
    /// Percentage of evaluated queries with a true positive in their top N.
    pub percent: f64,
    pub evaluated: usize,
    /// Queries without any ground-truth positive.
    pub skipped: usize,
}

fn check(db: &PlaceMap, gt_radius: f64) -> Result<()> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if !(gt_radius > 0.0) || !gt_radius.is_finite() {
        return Err(Error::InvalidParams(format!(
            "gt_radius must be positive, got {gt_radius}"
        )));
    }
    Ok(())
}

/// `Some(hit)` for a query with positives, `None` otherwise.
fn retrieve(query: &Query, db: &PlaceMap, gt_radius: f64, n: usize) -> Option<bool> {
    let pos = positives(&query.pose, db, gt_radius);
    if pos.is_empty() {
        return None;
    }
    Some(
        top_n(&query.descriptor, db, n)
            .iter()
            .any(|i| pos.binary_search(i).is_ok()),
    )
}

pub fn recall_at_n(queries: &[Query], db: &PlaceMap, gt_radius: f64, n: usize) -> Result<Recall> {
    check(db, gt_radius)?;
    if n == 0 {
        return Err(Error::InvalidParams("N must be at least 1".into()));
    }
    let outcomes: Vec<Option<bool>> = queries
        .par_iter()
        .map(|q| retrieve(q, db, gt_radius, n))
        .collect();
    let evaluated = outcomes.iter().filter(|o| o.is_some()).count();
    if evaluated == 0 {
        return Err(Error::EmptyInput("no query has a ground-truth positive"));
    }
    let hits = outcomes.iter().filter(|o| **o == Some(true)).count();
    Ok(Recall {
        n,
        percent: 100.0 * hits as f64 / evaluated as f64,
        evaluated,
        skipped: queries.len() - evaluated,
    })
}

/// Percentage of runs in which at least `min_successes` of the five frames
/// retrieve a true positive at rank 1.
pub fn seq_protocol(
    runs: &[Vec<Query>],
    db: &PlaceMap,
    gt_radius: f64,
    min_successes: usize,
) -> Result<f64> {
    check(db, gt_radius)?;
    if runs.is_empty() {
        return Err(Error::EmptyInput("no query runs"));
    }
    if let Some((index, run)) = runs.iter().enumerate().find(|(_, r)| r.len() != RUN_LENGTH) {
        return Err(Error::RunLength {
            index,
            len: run.len(),
        });
    }
    let correct = runs
        .par_iter()
        .map(|run| {
            let successes = run
                .iter()
                .filter(|q| retrieve(q, db, gt_radius, 1) == Some(true))
                .count();
            successes >= min_successes
        })
        .filter(|&ok| ok)
        .count();
    Ok(100.0 * correct as f64 / runs.len() as f64)
}

/// Consecutive, non-overlapping five-frame runs.
pub fn consecutive_runs(queries: &[Query]) -> Vec<Vec<Query>> {
    queries
        .chunks_exact(RUN_LENGTH)
        .map(<[Query]>::to_vec)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub n: Option<usize>,
}

/// Collected metrics for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub gt_radius: f64,
    pub db_size: usize,
    pub metrics: Vec<Metric>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,n,gt_radius,db_size\n");
        for m in &self.metrics {
            let n = m.n.map(|n| n.to_string()).unwrap_or_default();
            writeln!(out, "{},{:.4},{},{},{}", m.name, m.value, n, self.gt_radius, self.db_size).unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.metrics {
            match m.n {
                Some(n) => writeln!(out, "{} = {:.2} (N={n})", m.name, m.value),
                None => writeln!(out, "{} = {:.2}", m.name, m.value),
            }
            .unwrap();
        }
        writeln!(out, "gt_radius = {}, db_size = {}", self.gt_radius, self.db_size).unwrap();
        out
    }
}

/// Recall@N for every requested N, Recall@1%, and the sequence protocol over
/// consecutive query runs (omitted with fewer than five queries).
pub fn evaluate(
    queries: &[Query],
    db: &PlaceMap,
    gt_radius: f64,
    ns: &[usize],
    min_successes: usize,
) -> Result<Report> {
    let mut metrics = Vec::new();
    for &n in ns {
        let r = recall_at_n(queries, db, gt_radius, n)?;
        metrics.push(Metric {
            name: format!("recall@{n}"),
            value: r.percent,
            n: Some(n),
        });
    }
    let n1 = one_percent_n(db.len());
    let r = recall_at_n(queries, db, gt_radius, n1)?;
    metrics.push(Metric {
        name: "recall@1%".into(),
        value: r.percent,
        n: Some(n1),
    });
    let runs = consecutive_runs(queries);
    if !runs.is_empty() {
        metrics.push(Metric {
            name: "seq_protocol".into(),
            value: seq_protocol(&runs, db, gt_radius, min_successes)?,
            n: None,
        });
    }
    Ok(Report {
        gt_radius,
        db_size: db.len(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placemap::PlaceEntry;

    fn unit(i: usize) -> GlobalDescriptor {
        let mut v = vec![0.0; 16];
        v[i] = 1.0;
        GlobalDescriptor::from_vec(v)
    }

    fn line_map(n: usize) -> PlaceMap {
        let mut m = PlaceMap::with_dim(16);
        for i in 0..n {
            m.insert(PlaceEntry::new(i as u64, Pose::new(0, i as f64 * 10.0, 0.0, 0.0), unit(i)))
                .unwrap();
        }
        m
    }

    fn self_queries(m: &PlaceMap) -> Vec<Query> {
        m.entries()
            .iter()
            .map(|e| Query::new(e.descriptor.clone(), e.pose))
            .collect()
    }

    #[test]
    fn self_eval_is_perfect() {
        let m = line_map(10);
        let r = recall_at_n(&self_queries(&m), &m, 1.0, 1).unwrap();
        assert_eq!((r.percent, r.evaluated, r.skipped), (100.0, 10, 0));
    }

    #[test]
    fn one_percent() {
        assert_eq!(one_percent_n(1), 1);
        assert_eq!(one_percent_n(100), 1);
        assert_eq!(one_percent_n(101), 2);
        assert_eq!(one_percent_n(5000), 50);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let m = line_map(4);
        let mut v = vec![0.0; 16];
        v[1] = 1.0;
        v[2] = 1.0;
        let q = GlobalDescriptor::normalized(v);
        assert_eq!(top_n(&q, &m, 2), vec![1, 2]);
        assert_eq!(top_n(&q, &m, 1), vec![1]);
        assert_eq!(top_n(&q, &m, 9), vec![1, 2, 0, 3]);
    }

    #[test]
    fn skipped_queries_and_errors() {
        let m = line_map(4);
        let far = Query::new(unit(0), Pose::new(0, 1e6, 0.0, 0.0));
        let mut qs = self_queries(&m);
        qs.push(far.clone());
        let r = recall_at_n(&qs, &m, 1.0, 1).unwrap();
        assert_eq!((r.evaluated, r.skipped), (4, 1));
        assert!(matches!(recall_at_n(&[far], &m, 1.0, 1), Err(Error::EmptyInput(_))));
        assert!(matches!(
            recall_at_n(&qs, &PlaceMap::with_dim(16), 1.0, 1),
            Err(Error::EmptyDatabase)
        ));
        assert!(recall_at_n(&qs, &m, 0.0, 1).is_err());
        assert!(recall_at_n(&qs, &m, 1.0, 0).is_err());
    }

    #[test]
    fn three_of_five_counts() {
        let m = line_map(8);
        let mut run = self_queries(&m)[..5].to_vec();
        // Orthogonal frames tie with every entry and fall back to index 0.
        run[1].descriptor = unit(12);
        run[3].descriptor = unit(13);
        assert_eq!(seq_protocol(&[run.clone()], &m, 1.0, 3).unwrap(), 100.0);
        assert_eq!(seq_protocol(&[run.clone()], &m, 1.0, 4).unwrap(), 0.0);
        run[4].descriptor = unit(14);
        assert_eq!(seq_protocol(&[run.clone()], &m, 1.0, 3).unwrap(), 0.0);
        assert!(matches!(
            seq_protocol(&[run[..4].to_vec()], &m, 1.0, 3),
            Err(Error::RunLength { index: 0, len: 4 })
        ));
    }

    #[test]
    fn report_formats() {
        let m = line_map(10);
        let rep = evaluate(&self_queries(&m), &m, 1.0, &[1, 5], 3).unwrap();
        let csv = rep.to_csv();
        assert!(csv.starts_with("metric,value,n,gt_radius,db_size\n"));
        assert!(csv.contains("recall@1,100.0000,1,1,10"));
        assert!(csv.contains("recall@1%,100.0000,1,1,10"));
        assert!(csv.contains("seq_protocol,100.0000,,1,10"));
        assert!(rep.to_text().contains("recall@5 = 100.00 (N=5)"));
    }
}
