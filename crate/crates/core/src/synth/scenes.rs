use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cloud::{Point3, PointCloud, Pose};
use crate::error::{Error, Result};

const SENSOR_HEIGHT: f64 = 1.7;
const GROUND_RADIUS: f64 = 20.0;
const GROUND_FRACTION: f64 = 0.4;
const ARCHETYPES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Distinct places driven twice around a loop.
    Loop,
    /// Places drawn from three scene archetypes, driven twice.
    Blobs,
    /// A straight drive whose queries never revisit the map.
    Line,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loop" => Ok(Scenario::Loop),
            "blobs" => Ok(Scenario::Blobs),
            "line" => Ok(Scenario::Line),
            _ => Err(Error::InvalidParams(format!(
                "unknown scenario {s:?} (expected loop, blobs or line)"
            ))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Loop => "loop",
            Scenario::Blobs => "blobs",
            Scenario::Line => "line",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub scenario: Scenario,
    pub places: usize,
    /// Points per frame.
    pub points: usize,
    /// Deviation of the Gaussian jitter added to every query point, metres.
    pub noise: f64,
    /// Distance between consecutive places, metres.
    pub spacing: f64,
    pub seed: u64,
}

impl SceneParams {
    pub fn new(scenario: Scenario, noise: f64, seed: u64) -> Self {
        SceneParams {
            scenario,
            places: 100,
            points: 6000,
            noise,
            spacing: 25.0,
            seed,
        }
    }
}

/// Frames in the sensor frame with their poses; query frame ids continue
/// after the map's.
#[derive(Debug, Clone)]
pub struct SceneCorpus {
    pub map: Vec<(PointCloud, Pose)>,
    pub queries: Vec<(PointCloud, Pose)>,
    /// `(query frame id, map frame id)` for every revisit.
    pub truth: Vec<(u64, u64)>,
}

/// Static geometry around one place, in sensor coordinates.
#[derive(Debug, Clone, Default)]
struct Layout {
    slope: (f64, f64),
    /// `[x, y, amplitude, width]`
    bumps: Vec<[f64; 4]>,
    /// `[x, y, radius, height]`
    poles: Vec<[f64; 4]>,
    /// `[x0, y0, x1, y1, height]`
    walls: Vec<[f64; 5]>,
    /// `[cx, cy, half x, half y, height]`
    boxes: Vec<[f64; 5]>,
}

impl Layout {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let pos = |rng: &mut ChaCha8Rng| (rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0));
        let mut l = Layout {
            slope: (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)),
            ..Layout::default()
        };
        for _ in 0..rng.gen_range(0..4) {
            let (x, y) = pos(rng);
            l.bumps.push([x, y, rng.gen_range(0.2..1.5), rng.gen_range(2.0..6.0)]);
        }
        for _ in 0..rng.gen_range(1..9) {
            let (x, y) = pos(rng);
            l.poles.push([x, y, rng.gen_range(0.1..0.5), rng.gen_range(2.0..9.0)]);
        }
        for _ in 0..rng.gen_range(0..4) {
            let (x, y) = pos(rng);
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let len = rng.gen_range(5.0..15.0);
            l.walls.push([x, y, x + len * angle.cos(), y + len * angle.sin(), rng.gen_range(2.0..6.0)]);
        }
        for _ in 0..rng.gen_range(0..5) {
            let (x, y) = pos(rng);
            l.boxes.push([x, y, rng.gen_range(0.8..4.0), rng.gen_range(0.8..4.0), rng.gen_range(1.0..5.0)]);
        }
        l
    }

    /// One of a few fixed scene types with small per-place jitter.
    fn archetype(kind: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut j = |s: f64| rng.gen_range(-s..s);
        let mut l = Layout::default();
        match kind {
            0 => {
                for gx in [-9.0, -3.0, 3.0, 9.0] {
                    for gy in [-9.0, 0.0, 9.0] {
                        l.poles.push([gx + j(0.5), gy + j(0.5), 0.3, 6.0 + j(0.3)]);
                    }
                }
            }
            1 => {
                for y in [-6.0, 6.0] {
                    let y = y + j(0.3);
                    l.walls.push([-15.0, y, 15.0, y, 8.0 + j(0.3)]);
                }
            }
            _ => {
                for (x, y) in [(-8.0, -6.0), (7.0, 2.0), (-2.0, 9.0)] {
                    l.bumps.push([x + j(0.5), y + j(0.5), 2.5 + j(0.2), 5.0]);
                }
                l.boxes.push([j(1.0), j(1.0), 1.0, 1.0, 1.0]);
            }
        }
        l
    }

    fn ground(&self, x: f64, y: f64) -> f64 {
        let bumps: f64 = self
            .bumps
            .iter()
            .map(|[bx, by, amp, w]| amp * (-((x - bx).powi(2) + (y - by).powi(2)) / (w * w)).exp())
            .sum();
        -SENSOR_HEIGHT + self.slope.0 * x + self.slope.1 * y + bumps
    }

    fn surfaces(&self) -> Vec<(f64, Surface)> {
        let mut s = Vec::new();
        for &p in &self.poles {
            s.push((std::f64::consts::TAU * p[2] * p[3], Surface::Pole(p)));
        }
        for &w in &self.walls {
            s.push(((w[2] - w[0]).hypot(w[3] - w[1]) * w[4], Surface::Wall(w)));
        }
        for &b in &self.boxes {
            s.push((4.0 * (b[2] + b[3]) * b[4] + 4.0 * b[2] * b[3], Surface::Box(b)));
        }
        s
    }

    fn sample(&self, n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<Point3> {
        let surfaces = self.surfaces();
        let total: f64 = surfaces.iter().map(|s| s.0).sum();
        let n_ground = if total > 0.0 {
            (n as f64 * GROUND_FRACTION).round() as usize
        } else {
            n
        };
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n_ground {
            let r = GROUND_RADIUS * rng.gen::<f64>().sqrt();
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            let (x, y) = (r * t.cos(), r * t.sin());
            pts.push(Point3::new(x, y, self.ground(x, y)));
        }
        for _ in n_ground..n {
            let mut pick = rng.gen::<f64>() * total;
            let surface = surfaces
                .iter()
                .find(|(a, _)| {
                    pick -= a;
                    pick < 0.0
                })
                .unwrap_or_else(|| surfaces.last().expect("objects present"));
            pts.push(surface.1.sample(self, rng));
        }
        if noise > 0.0 {
            let normal = Normal::new(0.0, noise).expect("finite deviation");
            for p in &mut pts {
                p.x += normal.sample(rng);
                p.y += normal.sample(rng);
                p.z += normal.sample(rng);
            }
        }
        pts
    }
}

#[derive(Debug, Clone, Copy)]
enum Surface {
    Pole([f64; 4]),
    Wall([f64; 5]),
    Box([f64; 5]),
}

impl Surface {
    fn sample(&self, layout: &Layout, rng: &mut ChaCha8Rng) -> Point3 {
        match *self {
            Surface::Pole([x, y, r, h]) => {
                let t = rng.gen_range(0.0..std::f64::consts::TAU);
                let z = layout.ground(x, y) + rng.gen::<f64>() * h;
                Point3::new(x + r * t.cos(), y + r * t.sin(), z)
            }
            Surface::Wall([x0, y0, x1, y1, h]) => {
                let t: f64 = rng.gen();
                let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
                Point3::new(x, y, layout.ground(x, y) + rng.gen::<f64>() * h)
            }
            Surface::Box([cx, cy, hx, hy, h]) => {
                let base = layout.ground(cx, cy);
                let side = 4.0 * (hx + hy) * h;
                let top = 4.0 * hx * hy;
                let (u, v): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if rng.gen::<f64>() * (side + top) < top {
                    return Point3::new(cx + u * hx, cy + v * hy, base + h);
                }
                let z = base + rng.gen::<f64>() * h;
                // Pick a side proportionally to its length.
                if rng.gen::<f64>() * (hx + hy) < hx {
                    let y = if v < 0.0 { cy - hy } else { cy + hy };
                    Point3::new(cx + u * hx, y, z)
                } else {
                    let x = if v < 0.0 { cx - hx } else { cx + hx };
                    Point3::new(x, cy + u * hy, z)
                }
            }
        }
    }
}

fn sub_seed(seed: u64, role: u64, index: usize) -> u64 {
    let mut z = seed ^ role.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const ROLE_LAYOUT: u64 = 1;
const ROLE_MAP: u64 = 2;
const ROLE_QUERY: u64 = 3;

fn layout_for(params: &SceneParams, place: usize) -> Layout {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(params.seed, ROLE_LAYOUT, place));
    match params.scenario {
        Scenario::Blobs => Layout::archetype((place / 5) % ARCHETYPES, &mut rng),
        _ => Layout::random(&mut rng),
    }
}

/// Scene type of a place in the `blobs` scenario.
pub fn archetype_of(place: usize) -> usize {
    (place / 5) % ARCHETYPES
}

/// One sensor-frame scan of place `place`.
pub fn place_cloud(params: &SceneParams, place: usize, noise: f64, sample_seed: u64, frame_id: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    PointCloud::new(layout_for(params, place).sample(params.points, noise, &mut rng), frame_id)
}

pub fn generate(params: &SceneParams) -> Result<SceneCorpus> {
    if params.places == 0 || params.points == 0 || !(params.noise >= 0.0) || !params.noise.is_finite() || !(params.spacing > 0.0) {
        return Err(Error::InvalidParams(format!("invalid scene parameters {params:?}")));
    }
    let p = params.places;
    let radius = p as f64 * params.spacing / std::f64::consts::TAU;
    let map_pose = |i: usize| match params.scenario {
        Scenario::Line => (i as f64 * params.spacing, 0.0),
        _ => {
            let theta = std::f64::consts::TAU * i as f64 / p as f64;
            (radius * theta.cos(), radius * theta.sin())
        }
    };
    let map: Vec<(PointCloud, Pose)> = (0..p)
        .into_par_iter()
        .map(|i| {
            let (x, y) = map_pose(i);
            let cloud = place_cloud(params, i, 0.0, sub_seed(params.seed, ROLE_MAP, i), i as u64);
            (cloud, Pose::new(i as u64, x, y, 0.0))
        })
        .collect();
    // Line queries continue past the end of the map; the others revisit it.
    let query_place = |j: usize| match params.scenario {
        Scenario::Line => p + j,
        _ => j,
    };
    let queries: Vec<(PointCloud, Pose)> = (0..p)
        .into_par_iter()
        .map(|j| {
            let id = (p + j) as u64;
            let place = query_place(j);
            let (x, y) = map_pose(place);
            let cloud = place_cloud(params, place, params.noise, sub_seed(params.seed, ROLE_QUERY, j), id);
            (cloud, Pose::new(id, x, y, 0.0))
        })
        .collect();
    let truth = match params.scenario {
        Scenario::Line => Vec::new(),
        _ => (0..p).map(|j| ((p + j) as u64, j as u64)).collect(),
    };
    Ok(SceneCorpus { map, queries, truth })
}
