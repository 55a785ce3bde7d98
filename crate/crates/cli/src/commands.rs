use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::Instant;

use seqlpd::cloud::{accumulate_submap, normalize_submap};
use seqlpd::cluster::{elbow_select, kmeanspp, super_keyframes};
use seqlpd::eval::{evaluate, Query};
use seqlpd::features::local_features;
use seqlpd::net::{baseline_descriptor, random_weights};
use seqlpd::seqmatch::{coarse_match, difference_matrix};
use seqlpd::synth::{self, Scenario, SceneParams};
use seqlpd::{
    detect_loop, ClusterParams, Error, GlobalDescriptor, NetConfig, Network, PlaceEntry, PlaceMap,
    Result, SuperKeyframes, WeightSet,
};

use crate::config::Config;
use crate::frames::{read_frames, write_frames, Frames};
use crate::DescriberArgs;

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source: e,
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

enum Describer {
    Baseline,
    Net(Box<Network>),
}

impl Describer {
    fn from_args(args: &DescriberArgs, cfg: &Config) -> Result<Self> {
        if args.baseline {
            return Ok(Describer::Baseline);
        }
        let Some(path) = &args.weights else {
            return Err(Error::InvalidParams("pass --weights <file> or --baseline".into()));
        };
        let ws = WeightSet::load(path)?;
        let config = NetConfig::from_weights(&ws, cfg.k_graph)?;
        Ok(Describer::Net(Box::new(Network::new(config, ws)?)))
    }
}

/// Sampling seed for one frame, so that a frame's descriptor does not depend
/// on which other frames were described in the same run.
fn frame_seed(seed: u64, frame_id: u64) -> u64 {
    seed ^ frame_id.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One descriptor per frame, or per accumulated submap when the frames are
/// posed. Per-frame timing goes to stderr.
fn describe_frames(frames: &Frames, describer: &Describer, cfg: &Config) -> Result<PlaceMap> {
    let mut map = PlaceMap::new();
    for i in 0..frames.clouds.len() {
        let start = Instant::now();
        let pose = frames.poses[i];
        let cloud = if frames.posed {
            accumulate_submap(&frames.clouds[..=i], &frames.poses[..=i], cfg.trajectory_len)?
        } else {
            frames.clouds[i].clone()
        };
        let submap = normalize_submap(&cloud, cfg.n_sub, frame_seed(cfg.seed, pose.frame_id))?;
        let lf = local_features(&submap, cfg.k_local)?;
        let descriptor = match describer {
            Describer::Baseline => baseline_descriptor(&submap, &lf)?,
            Describer::Net(net) => net.describe(&submap, &lf)?,
        };
        map.insert(PlaceEntry::new(pose.frame_id, pose, descriptor))?;
        eprintln!(
            "describe frame={} points={} ms={:.1}",
            pose.frame_id,
            cloud.len(),
            start.elapsed().as_secs_f64() * 1e3
        );
    }
    Ok(map)
}

/// A frame directory is described; anything else is read as an LPDM map.
fn load_queries(path: &Path, args: &DescriberArgs, cfg: &Config) -> Result<PlaceMap> {
    if path.is_dir() {
        let frames = read_frames(path)?;
        describe_frames(&frames, &Describer::from_args(args, cfg)?, cfg)
    } else {
        PlaceMap::load(path)
    }
}

pub fn describe(cfg: &Config, input: &Path, out: &Path, args: &DescriberArgs) -> Result<()> {
    let describer = Describer::from_args(args, cfg)?;
    let frames = read_frames(input)?;
    let map = describe_frames(&frames, &describer, cfg)?;
    map.save(out)?;
    println!("entries={} out={}", map.len(), out.display());
    Ok(())
}

pub fn cluster(cfg: &Config, map_path: &Path, out: &Path) -> Result<()> {
    let d = cfg
        .d
        .ok_or_else(|| Error::InvalidParams("cluster needs --d".into()))?;
    let map = PlaceMap::load(map_path)?;
    let descs = map.descriptors();
    if descs.is_empty() {
        return Err(Error::EmptyInput("place map has no entries"));
    }
    let params = ClusterParams {
        d,
        k_max: cfg.k_max,
        iters_max: cfg.iters_max,
        seed: cfg.seed,
    };
    let sel = elbow_select(&descs, &params)?;
    // A single entry cannot show an elbow; it is its own cluster.
    let clustering = if descs.len() == 1 {
        kmeanspp(&descs, 1, cfg.seed, cfg.iters_max)?
    } else {
        sel.clustering.clone()
    };
    let skf = super_keyframes(&descs, &clustering)?;
    skf.save(out, d)?;

    let entries = map.entries();
    let sizes: Vec<String> = clustering.sizes().iter().map(usize::to_string).collect();
    let keyframes: Vec<String> = skf
        .clusters()
        .iter()
        .map(|c| entries[c.keyframe].frame_id.to_string())
        .collect();
    let mut out = io::stdout().lock();
    writeln!(out, "K={}", clustering.k()).ok();
    writeln!(out, "elbow_K={}", sel.elbow_k).ok();
    writeln!(out, "distortion={:.6}", clustering.distortion).ok();
    writeln!(out, "constraint_satisfied={}", sel.constraint_satisfied).ok();
    writeln!(out, "sizes={}", sizes.join(",")).ok();
    writeln!(out, "keyframes={}", keyframes.join(",")).ok();
    Ok(())
}

pub fn match_queries(
    cfg: &Config,
    map_path: &Path,
    clusters_path: &Path,
    queries: &Path,
    diffmat: Option<&Path>,
    args: &DescriberArgs,
) -> Result<()> {
    let map = PlaceMap::load(map_path)?;
    let descs = map.descriptors();
    let (skf, _d): (SuperKeyframes, f32) = SuperKeyframes::load(clusters_path, &descs)?;
    let params = cfg.match_params();
    let qmap = load_queries(queries, args, cfg)?;
    let qd: Vec<GlobalDescriptor> = qmap.descriptors();

    if let Some(path) = diffmat {
        let m = difference_matrix(&qd, &descs)?;
        let text = if path.extension().is_some_and(|e| e == "csv") {
            m.to_csv()
        } else {
            m.to_pgm()
        };
        write_file(path, text)?;
    }
    if qd.len() < params.window {
        return Err(Error::InsufficientHistory(params.window));
    }

    let mut out = io::stdout().lock();
    for end in params.window..=qd.len() {
        let frame = qmap.entries()[end - 1].frame_id;
        let window = &qd[end - params.window..end];
        match detect_loop(window, &map, &skf, &params) {
            Ok(m) => {
                let reference = if m.accepted {
                    m.frame_id.to_string()
                } else {
                    "none".into()
                };
                writeln!(
                    out,
                    "frame={frame} ref={reference} v={:.2} score={:.6} accepted={} cluster={}",
                    m.velocity, m.score, m.accepted, m.cluster_id
                )
                .ok();
            }
            // No trajectory fits around the matched cluster.
            Err(Error::InsufficientHistory(_)) => {
                let c = coarse_match(&window[params.window - 1], &skf)?;
                writeln!(out, "frame={frame} ref=none v=- score=- accepted=false cluster={c}").ok();
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

pub fn synth(cfg: &Config, out: &Path, scenario: &str, noise: f64, places: usize, points: usize) -> Result<()> {
    let scenario: Scenario = scenario.parse()?;
    let params = SceneParams {
        places,
        points,
        ..SceneParams::new(scenario, noise, cfg.seed)
    };
    let corpus = synth::generate(&params)?;
    write_frames(&out.join("map"), &corpus.map)?;
    write_frames(&out.join("query"), &corpus.queries)?;
    let mut gt = String::from("query_frame_id,map_frame_id\n");
    for (q, m) in &corpus.truth {
        gt.push_str(&format!("{q},{m}\n"));
    }
    write_file(&out.join("gt.csv"), gt)?;
    println!(
        "scenario={scenario} map={} queries={} revisits={} out={}",
        corpus.map.len(),
        corpus.queries.len(),
        corpus.truth.len(),
        out.display()
    );
    Ok(())
}

pub fn eval(cfg: &Config, map_path: &Path, queries: &Path, ns: &[usize], args: &DescriberArgs) -> Result<()> {
    let gt_radius = cfg
        .gt_radius
        .ok_or_else(|| Error::InvalidParams("eval needs --gt-radius".into()))?;
    let map = PlaceMap::load(map_path)?;
    let qmap = load_queries(queries, args, cfg)?;
    if qmap.is_empty() {
        return Err(Error::EmptyInput("no queries"));
    }
    let qs: Vec<Query> = qmap
        .entries()
        .iter()
        .map(|e| Query::new(e.descriptor.clone(), e.pose))
        .collect();
    let report = evaluate(&qs, &map, gt_radius, ns, cfg.min_successes)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn init_weights(cfg: &Config, out: &Path, compact: bool) -> Result<()> {
    let base = if compact {
        NetConfig::compact()
    } else {
        NetConfig::default()
    };
    let config = NetConfig {
        k_graph: cfg.k_graph,
        vlad_clusters: if compact { base.vlad_clusters } else { cfg.vlad_clusters },
        ..base
    };
    let ws = random_weights(&config, cfg.seed)?;
    ws.save(out)?;
    println!("tensors={} out={}", ws.len(), out.display());
    Ok(())
}
