//! Loop-closure detection from LiDAR point clouds.
//!
//! A submap is reduced to a 256-d global descriptor (hand-built local
//! features, a point network with graph aggregation and NetVLAD pooling, or a
//! weight-free histogram baseline). Descriptors are stored in a [`PlaceMap`],
//! clustered into typical places with one super keyframe each, and new frames
//! are matched coarse-to-fine: first against the super keyframes, then by
//! velocity-bounded sequence search around the members of the matched cluster.

pub mod cloud;
pub mod cluster;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod features;
mod io;
pub mod kdtree;
pub mod net;
pub mod placemap;
pub mod seqmatch;
pub mod synth;

pub use cluster::{ClusterParams, Clustering, ElbowSelection, SuperKeyframes};
pub use cloud::{Point3, PointCloud, Pose, SpatialIndex, Submap};
pub use descriptor::{l2, GlobalDescriptor, DESCRIPTOR_DIM};
pub use error::{Error, Result};
pub use features::{LocalFeatures, PointFeatures};
pub use net::{NetConfig, Network, Tensor, WeightSet};
pub use placemap::{PlaceEntry, PlaceMap};
pub use seqmatch::{detect_loop, DifferenceMatrix, MatchParams, MatchResult};
