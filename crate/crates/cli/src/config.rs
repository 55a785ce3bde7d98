//! Run settings read from an optional `key = value` file and overridden by
//! command-line flags.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use seqlpd::cluster::DEFAULT_ITERS_MAX;
use seqlpd::eval::DEFAULT_MIN_SUCCESSES;
use seqlpd::net::{QuadrupletMargins, DEFAULT_K_GRAPH, DEFAULT_VLAD_CLUSTERS, P_NEG, P_POS};
use seqlpd::{Error, MatchParams, Result, DESCRIPTOR_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub k_local: usize,
    pub k_graph: usize,
    pub n_sub: usize,
    pub descriptor_dim: usize,
    pub vlad_clusters: usize,
    pub alpha: f64,
    pub beta: f64,
    pub p_pos: usize,
    pub p_neg: usize,
    pub trajectory_len: f64,
    pub window: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub v_step: f64,
    pub accept_ratio: f64,
    pub bidirectional: bool,
    pub d: Option<f64>,
    pub k_max: usize,
    pub iters_max: usize,
    pub gt_radius: Option<f64>,
    pub min_successes: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        let m = QuadrupletMargins::default();
        let p = MatchParams::default();
        Config {
            k_local: 20,
            k_graph: DEFAULT_K_GRAPH,
            n_sub: 4096,
            descriptor_dim: DESCRIPTOR_DIM,
            vlad_clusters: DEFAULT_VLAD_CLUSTERS,
            alpha: m.alpha,
            beta: m.beta,
            p_pos: P_POS,
            p_neg: P_NEG,
            trajectory_len: 20.0,
            window: p.window,
            v_min: p.v_min,
            v_max: p.v_max,
            v_step: p.v_step,
            accept_ratio: p.accept_ratio,
            bidirectional: p.bidirectional,
            d: None,
            k_max: 20,
            iters_max: DEFAULT_ITERS_MAX,
            gt_radius: None,
            min_successes: DEFAULT_MIN_SUCCESSES,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParams(format!("bad value {value:?} for {key}")))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        let mut cfg = Config::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParams(format!("line {}: expected key = value", no + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "k_local" => self.k_local = parse(key, v)?,
            "k_graph" => self.k_graph = parse(key, v)?,
            "n_sub" => self.n_sub = parse(key, v)?,
            "descriptor_dim" => self.descriptor_dim = parse(key, v)?,
            "vlad_clusters" => self.vlad_clusters = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "p_pos" => self.p_pos = parse(key, v)?,
            "p_neg" => self.p_neg = parse(key, v)?,
            "trajectory_len" => self.trajectory_len = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "v_min" => self.v_min = parse(key, v)?,
            "v_max" => self.v_max = parse(key, v)?,
            "v_step" => self.v_step = parse(key, v)?,
            "accept_ratio" => self.accept_ratio = parse(key, v)?,
            "bidirectional" => self.bidirectional = parse(key, v)?,
            "d" => self.d = Some(parse(key, v)?),
            "k_max" => self.k_max = parse(key, v)?,
            "iters_max" => self.iters_max = parse(key, v)?,
            "gt_radius" => self.gt_radius = Some(parse(key, v)?),
            "min_successes" => self.min_successes = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            _ => return Err(Error::InvalidParams(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParams(what.to_owned()));
        if self.k_local < 2 {
            return bad("k_local must be at least 2");
        }
        if self.k_graph == 0 || self.n_sub == 0 || self.vlad_clusters == 0 {
            return bad("k_graph, n_sub and vlad_clusters must be positive");
        }
        if self.descriptor_dim != DESCRIPTOR_DIM {
            return bad("descriptor_dim must be 256");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be non-negative");
        }
        if self.p_pos == 0 || self.p_neg == 0 {
            return bad("p_pos and p_neg must be positive");
        }
        if !(self.trajectory_len > 0.0) {
            return bad("trajectory_len must be positive");
        }
        if self.k_max == 0 || self.iters_max == 0 {
            return bad("k_max and iters_max must be positive");
        }
        if !(1..=5).contains(&self.min_successes) {
            return bad("min_successes must be between 1 and 5");
        }
        self.match_params().validate()
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            v_min: self.v_min,
            v_max: self.v_max,
            v_step: self.v_step,
            accept_ratio: self.accept_ratio,
            bidirectional: self.bidirectional,
            ..MatchParams::with_window(self.window)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overrides_and_comments() {
        let mut c = Config::default();
        c.apply_text("# tuned\nwindow = 6\n\nd=0.9  # threshold\nbidirectional = true\n")
            .unwrap();
        assert_eq!((c.window, c.d, c.bidirectional), (6, Some(0.9), true));
        assert_eq!(c.k_local, 20);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = Config::default();
        assert!(matches!(c.apply_text("windw = 3"), Err(Error::InvalidParams(_))));
        assert!(matches!(c.apply_text("window = three"), Err(Error::InvalidParams(_))));
        assert!(matches!(c.apply_text("window"), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn range_checks() {
        let c = Config {
            accept_ratio: 1.5,
            ..Config::default()
        };
        assert!(c.validate().is_err());
        let c = Config {
            descriptor_dim: 128,
            ..Config::default()
        };
        assert!(c.validate().is_err());
    }
}
