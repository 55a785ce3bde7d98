//! Forward inference of the place description network.
//!
//! Per point the network sees `[x', y', z', dz_max, z_var, s2d, l2d]`, where
//! the coordinates have been aligned by the input transform. A shared MLP
//! lifts these rows, graph aggregation mixes feature-space neighbourhoods, a
//! second shared MLP widens the result and NetVLAD pools everything into one
//! unit-norm descriptor. Weights are never trained here; they are loaded from
//! an `LPDW` file or drawn at random.

mod baseline;
mod graph;
mod layers;
mod loss;
mod netvlad;
mod tensor;
mod transform;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use baseline::baseline_descriptor;
pub use graph::{feature_distance2, feature_knn, graph_aggregate, EDGE_MLP};
pub use loss::{lazy_quadruplet_loss, QuadrupletMargins, P_NEG, P_POS};
pub use netvlad::netvlad;
pub use tensor::{Tensor, WeightSet};
pub use transform::{feature_transform, input_transform, FEATURE_TNET, INPUT_TNET};

use crate::cloud::Submap;
use crate::descriptor::{GlobalDescriptor, DESCRIPTOR_DIM};
use crate::error::{Error, Result};
use crate::features::LocalFeatures;
use layers::{mlp, right_multiply};

/// Width of the per-point network input.
pub const INPUT_DIM: usize = 7;
pub const DEFAULT_K_GRAPH: usize = 20;
pub const DEFAULT_VLAD_CLUSTERS: usize = 64;
const INIT_RANGE: f32 = 0.05;

const POINT_MLP: &str = "point_mlp";
const POST_MLP: &str = "post_mlp";

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Neighbours per point in the feature-space graph.
    pub k_graph: usize,
    pub vlad_clusters: usize,
    /// Per-point MLP widths applied to the 7-wide input.
    pub point_mlp: Vec<usize>,
    /// Per-point widths inside both transform networks.
    pub tnet_mlp: Vec<usize>,
    /// Fully connected widths after the transform-network max-pool.
    pub tnet_fc: Vec<usize>,
    /// The two edge layers.
    pub edge_mlp: [usize; 2],
    /// Per-point widths between graph aggregation and NetVLAD.
    pub post_mlp: Vec<usize>,
    pub output_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            k_graph: DEFAULT_K_GRAPH,
            vlad_clusters: DEFAULT_VLAD_CLUSTERS,
            point_mlp: vec![64, 64],
            tnet_mlp: vec![64, 128, 1024],
            tnet_fc: vec![512, 256],
            edge_mlp: [64, 128],
            post_mlp: vec![1024],
            output_dim: DESCRIPTOR_DIM,
        }
    }
}

fn push_layers(
    out: &mut Vec<(String, Vec<usize>)>,
    prefix: &str,
    mut width: usize,
    widths: &[usize],
) -> usize {
    for (i, &w) in widths.iter().enumerate() {
        out.push((format!("{prefix}.{i}.weight"), vec![width, w]));
        out.push((format!("{prefix}.{i}.bias"), vec![w]));
        width = w;
    }
    width
}

fn widths_of(ws: &WeightSet, prefix: &str) -> Vec<usize> {
    (0..layers::layer_count(ws, prefix))
        .map(|i| {
            ws.get(&format!("{prefix}.{i}.weight"))
                .map(|t| t.cols())
                .unwrap_or(0)
        })
        .collect()
}

impl NetConfig {
    /// A narrow variant with the same topology, for fast tests and benches.
    pub fn compact() -> Self {
        NetConfig {
            k_graph: 8,
            vlad_clusters: 8,
            point_mlp: vec![16, 16],
            tnet_mlp: vec![16, 32],
            tnet_fc: vec![16],
            edge_mlp: [16, 32],
            post_mlp: vec![64],
            output_dim: DESCRIPTOR_DIM,
        }
    }

    fn check(&self) -> Result<()> {
        let widths = self
            .point_mlp
            .iter()
            .chain(&self.tnet_mlp)
            .chain(&self.tnet_fc)
            .chain(&self.edge_mlp)
            .chain(&self.post_mlp);
        if self.k_graph == 0
            || self.vlad_clusters == 0
            || self.output_dim == 0
            || self.point_mlp.is_empty()
            || self.tnet_mlp.is_empty()
            || widths.clone().any(|&w| w == 0)
        {
            return Err(Error::InvalidParams(format!("invalid network config {self:?}")));
        }
        Ok(())
    }

    fn feature_width(&self) -> usize {
        *self.point_mlp.last().expect("point MLP has at least one layer")
    }

    /// Every tensor the architecture needs, with its shape, in name order.
    pub fn required_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (prefix, dim) in [(INPUT_TNET, 3), (FEATURE_TNET, self.feature_width())] {
            let w = push_layers(&mut out, &format!("{prefix}.mlp"), dim, &self.tnet_mlp);
            let w = push_layers(&mut out, &format!("{prefix}.fc"), w, &self.tnet_fc);
            out.push((format!("{prefix}.out.weight"), vec![w, dim * dim]));
            out.push((format!("{prefix}.out.bias"), vec![dim * dim]));
        }
        let f = push_layers(&mut out, POINT_MLP, INPUT_DIM, &self.point_mlp);
        push_layers(&mut out, EDGE_MLP, 2 * f, &self.edge_mlp);
        let d = push_layers(&mut out, POST_MLP, self.edge_mlp[1], &self.post_mlp);
        let c = self.vlad_clusters;
        out.push((netvlad::ASSIGN_WEIGHT.into(), vec![d, c]));
        out.push((netvlad::ASSIGN_BIAS.into(), vec![c]));
        out.push((netvlad::CENTERS.into(), vec![c, d]));
        out.push((netvlad::PROJECTION_WEIGHT.into(), vec![c * d, self.output_dim]));
        out.push((netvlad::PROJECTION_BIAS.into(), vec![self.output_dim]));
        out.sort();
        out
    }

    /// Checks that `ws` holds exactly the tensors this architecture needs.
    pub fn validate(&self, ws: &WeightSet) -> Result<()> {
        self.check()?;
        let required = self.required_shapes();
        for (name, shape) in &required {
            let t = ws.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if let Some((extra, _)) = ws
            .iter()
            .find(|(name, _)| !required.iter().any(|(r, _)| r == name))
        {
            return Err(Error::Shape(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }

    /// Recovers the architecture from tensor shapes. `k_graph` is not stored in
    /// weights and is taken from `k_graph`.
    pub fn from_weights(ws: &WeightSet, k_graph: usize) -> Result<Self> {
        let centers = ws.get(netvlad::CENTERS)?;
        let projection = ws.get(netvlad::PROJECTION_WEIGHT)?;
        let edge = widths_of(ws, EDGE_MLP);
        if edge.len() != 2 {
            return Err(Error::Shape(format!(
                "expected 2 edge layers, found {}",
                edge.len()
            )));
        }
        let config = NetConfig {
            k_graph,
            vlad_clusters: centers.rows(),
            point_mlp: widths_of(ws, POINT_MLP),
            tnet_mlp: widths_of(ws, &format!("{INPUT_TNET}.mlp")),
            tnet_fc: widths_of(ws, &format!("{INPUT_TNET}.fc")),
            edge_mlp: [edge[0], edge[1]],
            post_mlp: widths_of(ws, POST_MLP),
            output_dim: projection.cols(),
        };
        config.validate(ws)?;
        Ok(config)
    }
}

/// Fills every tensor uniformly from `[-0.05, 0.05]`; transform-network output
/// biases are set to the flattened identity.
pub fn random_weights(config: &NetConfig, seed: u64) -> Result<WeightSet> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = WeightSet::new();
    for (name, shape) in config.required_shapes() {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".out.bias") {
            let dim = (n as f64).sqrt().round() as usize;
            transform::identity(dim)
        } else {
            (0..n).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)).collect()
        };
        ws.insert(name, Tensor::new(shape, data)?);
    }
    Ok(ws)
}

/// A validated network ready for inference.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetConfig,
    weights: WeightSet,
}

impl Network {
    pub fn new(config: NetConfig, weights: WeightSet) -> Result<Self> {
        config.validate(&weights)?;
        Ok(Network { config, weights })
    }

    /// Loads an `LPDW` file and validates it against `config`.
    pub fn load(path: impl AsRef<std::path::Path>, config: NetConfig) -> Result<Self> {
        Self::new(config, WeightSet::load(path)?)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn weights(&self) -> &WeightSet {
        &self.weights
    }

    pub fn describe(&self, submap: &Submap, lf: &LocalFeatures) -> Result<GlobalDescriptor> {
        forward(submap, lf, &self.weights, self.config.k_graph)
    }
}

/// Full forward pass after validating `ws` against `config`.
pub fn describe(
    submap: &Submap,
    lf: &LocalFeatures,
    ws: &WeightSet,
    config: &NetConfig,
) -> Result<GlobalDescriptor> {
    config.validate(ws)?;
    forward(submap, lf, ws, config.k_graph)
}

fn forward(
    submap: &Submap,
    lf: &LocalFeatures,
    ws: &WeightSet,
    k_graph: usize,
) -> Result<GlobalDescriptor> {
    let n = submap.len();
    if n == 0 {
        return Err(Error::Shape("submap has no points".into()));
    }
    if lf.len() != n {
        return Err(Error::Shape(format!("{n} points but {} feature rows", lf.len())));
    }
    let coords = Tensor::new(
        vec![n, 3],
        submap
            .points
            .iter()
            .flat_map(|p| [p.x as f32, p.y as f32, p.z as f32])
            .collect(),
    )?;
    let t = input_transform(&coords, ws)?;
    let aligned = right_multiply(coords.data(), 3, t.data(), 3);

    let mut input = Vec::with_capacity(n * INPUT_DIM);
    for (xyz, row) in aligned.chunks_exact(3).zip(&lf.rows) {
        input.extend_from_slice(xyz);
        input.extend(row.to_array().iter().map(|&v| v as f32));
    }
    let (point_feats, f) = mlp(&input, INPUT_DIM, ws, POINT_MLP)?;
    let graph = graph_aggregate(&Tensor::new(vec![n, f], point_feats)?, k_graph, ws)?;
    let (wide, d) = mlp(graph.data(), graph.cols(), ws, POST_MLP)?;
    netvlad(&Tensor::new(vec![n, d], wide)?, ws)
}
