//! Seeded synthetic data with known ground truth: descriptor sequences for
//! exercising clustering and matching directly, and point-cloud scenes for
//! driving the whole pipeline.

mod descriptors;
mod scenes;

pub use descriptors::{
    blobs, noisy, orthogonal_queries, random_unit, synthetic_loop, LoopParams, SyntheticLoop,
};
pub use scenes::{archetype_of, generate, place_cloud, Scenario, SceneCorpus, SceneParams};
