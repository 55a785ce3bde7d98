//! Seeded fixtures shared by the pipeline benchmarks.

use seqlpd::cloud::normalize_submap;
use seqlpd::cluster::{elbow_select, super_keyframes};
use seqlpd::features::local_features;
use seqlpd::synth::{self, LoopParams, Scenario, SceneParams, SyntheticLoop};
use seqlpd::{ClusterParams, LocalFeatures, PointCloud, Submap, SuperKeyframes};

pub const N_SUB: usize = 4096;
pub const K_LOCAL: usize = 20;

/// One raw scan of a synthetic loop place.
pub fn scan(seed: u64) -> PointCloud {
    let params = SceneParams::new(Scenario::Loop, 0.05, seed);
    synth::place_cloud(&params, 0, 0.05, seed, 0)
}

pub fn submap(seed: u64) -> (Submap, LocalFeatures) {
    let sub = normalize_submap(&scan(seed), N_SUB, seed).expect("non-empty scan");
    let lf = local_features(&sub, K_LOCAL).expect("valid k");
    (sub, lf)
}

/// A descriptor-level loop with its super keyframes.
pub fn clustered_loop(places: usize, seed: u64) -> (SyntheticLoop, SuperKeyframes) {
    let lp = synth::synthetic_loop(&LoopParams::new(places, seed), 0.05).expect("valid route");
    let descs = lp.map.descriptors();
    let sel = elbow_select(&descs, &ClusterParams::new(1.2, 24)).expect("valid params");
    let skf = super_keyframes(&descs, &sel.clustering).expect("clustering fits map");
    (lp, skf)
}
