use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cloud::Pose;
use crate::descriptor::{GlobalDescriptor, DESCRIPTOR_DIM};
use crate::error::{Error, Result};
use crate::eval::Query;
use crate::placemap::{PlaceEntry, PlaceMap};

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn unit_f64(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn to_descriptor(v: &[f64]) -> GlobalDescriptor {
    GlobalDescriptor::normalized(v.iter().map(|&x| x as f32).collect())
}

/// Uniformly random unit vector supported on dims `[lo, hi)` of a `dim`-d
/// descriptor.
pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize, lo: usize, hi: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[lo..hi].copy_from_slice(&unit_f64(gaussian(rng, hi - lo)));
    v
}

/// `d` plus per-component Gaussian noise of deviation `sigma`, renormalized.
pub fn noisy(d: &GlobalDescriptor, sigma: f64, rng: &mut ChaCha8Rng) -> GlobalDescriptor {
    if sigma == 0.0 {
        return d.clone();
    }
    let v: Vec<f64> = d
        .as_slice()
        .iter()
        .map(|&x| {
            let g: f64 = StandardNormal.sample(rng);
            x as f64 + sigma * g
        })
        .collect();
    to_descriptor(&v)
}

/// A route of distinct places visited twice.
///
/// Place `i` belongs to place type `(i / segment) % types`; its descriptor
/// mixes the type's direction (weight² = `type_weight`) with a place-specific
/// direction. Places sit `spacing` metres apart on a circle. The second visit
/// steps through the places at `revisit_speed` places per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopParams {
    pub places: usize,
    pub types: usize,
    pub segment: usize,
    pub dim: usize,
    pub type_weight: f64,
    pub spacing: f64,
    pub revisit_speed: f64,
    /// Map descriptors are supported on dims `[lo, hi)`.
    pub subspace: (usize, usize),
    pub seed: u64,
}

impl LoopParams {
    pub fn new(places: usize, seed: u64) -> Self {
        LoopParams {
            places,
            types: 8,
            segment: 15,
            dim: DESCRIPTOR_DIM,
            type_weight: 0.6,
            spacing: 25.0,
            revisit_speed: 1.0,
            subspace: (0, DESCRIPTOR_DIM),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticLoop {
    /// First visit, frame ids `0..places`.
    pub map: PlaceMap,
    /// Second visit; frame ids continue after the map's.
    pub queries: Vec<Query>,
    /// Map index of the place each query revisits.
    pub truth: Vec<usize>,
    /// Pose radius that makes exactly the revisited place a positive.
    pub gt_radius: f64,
}

impl SyntheticLoop {
    pub fn query_descriptors(&self) -> Vec<GlobalDescriptor> {
        self.queries.iter().map(|q| q.descriptor.clone()).collect()
    }
}

pub fn synthetic_loop(route: &LoopParams, noise: f64) -> Result<SyntheticLoop> {
    let (lo, hi) = route.subspace;
    let ok = route.places >= 1
        && route.types >= 1
        && route.segment >= 1
        && lo < hi
        && hi <= route.dim
        && (0.0..=1.0).contains(&route.type_weight)
        && route.spacing > 0.0
        && route.revisit_speed > 0.0
        && noise >= 0.0;
    if !ok {
        return Err(Error::InvalidParams(format!("invalid loop parameters {route:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(route.seed);
    let type_dirs: Vec<Vec<f64>> = (0..route.types)
        .map(|_| random_unit(&mut rng, route.dim, lo, hi))
        .collect();
    let (a, b) = (route.type_weight.sqrt(), (1.0 - route.type_weight).sqrt());

    let radius = route.places as f64 * route.spacing / std::f64::consts::TAU;
    let place_pose = |i: usize| {
        let theta = std::f64::consts::TAU * i as f64 / route.places as f64;
        (radius * theta.cos(), radius * theta.sin())
    };

    let mut map = PlaceMap::with_dim(route.dim);
    for i in 0..route.places {
        let t = &type_dirs[(i / route.segment) % route.types];
        let u = random_unit(&mut rng, route.dim, lo, hi);
        let v: Vec<f64> = t.iter().zip(&u).map(|(t, u)| a * t + b * u).collect();
        let (x, y) = place_pose(i);
        map.insert(PlaceEntry::new(i as u64, Pose::new(0, x, y, 0.0), to_descriptor(&v)))?;
    }

    let mut queries = Vec::new();
    let mut truth = Vec::new();
    for j in 0.. {
        let place = (j as f64 * route.revisit_speed).round() as usize;
        if place >= route.places {
            break;
        }
        let (x, y) = place_pose(place);
        let id = (route.places + j) as u64;
        let d = noisy(&map.entries()[place].descriptor, noise, &mut rng);
        queries.push(Query::new(d, Pose::new(id, x, y, 0.0)));
        truth.push(place);
    }
    Ok(SyntheticLoop {
        map,
        queries,
        truth,
        gt_radius: route.spacing / 2.0,
    })
}

/// Unit descriptors supported on dims `[lo, hi)`.
pub fn orthogonal_queries(count: usize, dim: usize, lo: usize, hi: usize, seed: u64) -> Vec<GlobalDescriptor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| to_descriptor(&random_unit(&mut rng, dim, lo, hi)))
        .collect()
}

/// `k` Gaussian blobs of `per_blob` points each (per-component deviation
/// `sigma`) around centers that are pairwise `separation` apart. Points are
/// ordered blob by blob; the descriptors are not normalized.
pub fn blobs(
    k: usize,
    per_blob: usize,
    dim: usize,
    sigma: f64,
    separation: f64,
    seed: u64,
) -> Vec<GlobalDescriptor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Orthonormal directions scaled by separation/√2 are pairwise
    // `separation` apart.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < k {
        let mut v = gaussian(&mut rng, dim);
        for q in &basis {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        basis.push(unit_f64(v));
    }
    let scale = separation / 2f64.sqrt();
    let mut out = Vec::with_capacity(k * per_blob);
    for q in &basis {
        for _ in 0..per_blob {
            let v: Vec<f32> = q
                .iter()
                .zip(gaussian(&mut rng, dim))
                .map(|(c, g)| (scale * c + sigma * g) as f32)
                .collect();
            out.push(GlobalDescriptor::from_vec(v));
        }
    }
    out
}
