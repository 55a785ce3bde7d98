mod commands;
mod config;
mod frames;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seqlpd::{Error, Result};

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "seqlpd", version, about = "LiDAR loop-closure detection: describe, cluster, match, evaluate")]
struct Cli {
    #[command(flatten)]
    tunables: Tunables,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every command; each overrides the config file.
#[derive(Args, Debug, Default)]
struct Tunables {
    /// `key = value` settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Spatial neighbours per local-feature neighbourhood
    #[arg(long, global = true)]
    k_local: Option<usize>,
    /// Feature-space neighbours in graph aggregation
    #[arg(long, global = true)]
    k_graph: Option<usize>,
    /// Points per normalized submap
    #[arg(long, global = true)]
    n_sub: Option<usize>,
    /// Path length merged into one submap when poses are given, metres
    #[arg(long, global = true)]
    trajectory_len: Option<f64>,
    /// Sequence length W
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    v_min: Option<f64>,
    #[arg(long, global = true)]
    v_max: Option<f64>,
    #[arg(long, global = true)]
    v_step: Option<f64>,
    /// Accept when best < ratio · second best
    #[arg(long, global = true)]
    accept_ratio: Option<f64>,
    /// Also search trajectories driven in the opposite direction
    #[arg(long, global = true)]
    bidirectional: bool,
    /// Cluster radius bound D
    #[arg(long, global = true)]
    d: Option<f64>,
    #[arg(long, global = true)]
    k_max: Option<usize>,
    #[arg(long, global = true)]
    iters_max: Option<usize>,
    /// Pose distance within which a map entry counts as a true positive
    #[arg(long, global = true)]
    gt_radius: Option<f64>,
    /// Frames out of five that must succeed in the sequence protocol
    #[arg(long, global = true)]
    min_successes: Option<usize>,
}

impl Tunables {
    fn resolve(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        take!(seed, k_local, k_graph, n_sub, trajectory_len, window, v_min, v_max, v_step);
        take!(accept_ratio, k_max, iters_max, min_successes);
        if self.d.is_some() {
            c.d = self.d;
        }
        if self.gt_radius.is_some() {
            c.gt_radius = self.gt_radius;
        }
        if self.bidirectional {
            c.bidirectional = true;
        }
        c.validate()?;
        Ok(c)
    }
}

/// How frames are turned into descriptors.
#[derive(Args, Debug, Default)]
pub struct DescriberArgs {
    /// LPDW weight file
    #[arg(long, conflicts_with = "baseline")]
    pub weights: Option<PathBuf>,
    /// Use the weight-free histogram descriptor
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Describe every frame of a directory into an LPDM place map
    Describe {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        describer: DescriberArgs,
    },
    /// Cluster a place map and pick one super keyframe per cluster
    Cluster {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect loops for every window of query frames
    Match {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        /// Frame directory or LPDM file
        #[arg(long)]
        queries: PathBuf,
        /// Write the query-by-map difference matrix (.pgm, or .csv)
        #[arg(long)]
        diffmat: Option<PathBuf>,
        #[command(flatten)]
        describer: DescriberArgs,
    },
    /// Write a synthetic corpus with known revisits
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// loop, blobs or line
        #[arg(long, default_value = "loop")]
        scenario: String,
        /// Point noise on query scans, metres
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 100)]
        places: usize,
        /// Points per scan
        #[arg(long, default_value_t = 6000)]
        points: usize,
    },
    /// Recall@N, Recall@1% and the five-frame protocol as CSV
    Eval {
        #[arg(long)]
        map: PathBuf,
        /// Frame directory or LPDM file
        #[arg(long)]
        queries: PathBuf,
        /// Comma-separated N values
        #[arg(long, value_delimiter = ',', default_value = "1")]
        n: Vec<usize>,
        #[command(flatten)]
        describer: DescriberArgs,
    },
    /// Write randomly initialized network weights
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        /// Narrow layer widths
        #[arg(long)]
        compact: bool,
    },
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SEQLPD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidParams(format!("SEQLPD_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParams(format!("cannot start {n} threads: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let cfg = cli.tunables.resolve()?;
    match cli.command {
        Command::Describe {
            input,
            out,
            describer,
        } => commands::describe(&cfg, &input, &out, &describer),
        Command::Cluster { map, out } => commands::cluster(&cfg, &map, &out),
        Command::Match {
            map,
            clusters,
            queries,
            diffmat,
            describer,
        } => commands::match_queries(&cfg, &map, &clusters, &queries, diffmat.as_deref(), &describer),
        Command::Synth {
            out,
            scenario,
            noise,
            places,
            points,
        } => commands::synth(&cfg, &out, &scenario, noise, places, points),
        Command::Eval {
            map,
            queries,
            n,
            describer,
        } => commands::eval(&cfg, &map, &queries, &n, &describer),
        Command::InitWeights { out, compact } => commands::init_weights(&cfg, &out, compact),
    }
}

fn fail(code: &str, detail: &str) -> ExitCode {
    let detail = detail.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("E:{code}:{detail}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments");
            return fail("InvalidParams", first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), &e.to_string()),
    }
}
