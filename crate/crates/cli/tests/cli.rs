use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seqlpd::synth::{self, LoopParams};
use seqlpd::{GlobalDescriptor, PlaceEntry, PlaceMap, Pose, DESCRIPTOR_DIM};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn seqlpd(args: &[&str]) -> Output {
    seqlpd_env(args, &[])
}

fn seqlpd_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_seqlpd"));
    cmd.args(args).env_remove("SEQLPD_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

/// Asserts a failed run with exactly one `E:<code>:` line on stderr.
fn fails_with(o: Output, code: &str) {
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    let errors: Vec<&str> = stderr.lines().filter(|l| l.starts_with("E:")).collect();
    assert_eq!(errors.len(), 1, "stderr: {stderr}");
    assert!(
        errors[0].starts_with(&format!("E:{code}:")),
        "expected {code}, got {}",
        errors[0]
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sha(path: &Path) -> String {
    let digest = Sha256::digest(fs::read(path).unwrap());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of every file below `dir`, keyed by relative path.
fn tree_hashes(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), sha(&p));
            }
        }
    }
    out
}

fn synth_corpus(dir: &Path, scenario: &str, noise: &str, places: &str, points: &str, seed: &str) {
    ok(seqlpd(&[
        "synth", "--out", s(dir), "--scenario", scenario, "--noise", noise, "--places", places,
        "--points", points, "--seed", seed,
    ]));
}

fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {line:?}"))
}

fn unit(i: usize) -> GlobalDescriptor {
    let mut v = vec![0.0; DESCRIPTOR_DIM];
    v[i] = 1.0;
    GlobalDescriptor::from_vec(v)
}

fn write_map(path: &Path, descs: &[GlobalDescriptor], first_id: u64) {
    let mut m = PlaceMap::new();
    for (i, d) in descs.iter().enumerate() {
        let id = first_id + i as u64;
        m.insert(PlaceEntry::new(id, Pose::new(id, i as f64 * 10.0, 0.0, 0.0), d.clone()))
            .unwrap();
    }
    m.save(path).unwrap();
}

#[test]
fn synth_is_reproducible_and_ground_truth_is_exact() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    synth_corpus(&a, "loop", "0", "12", "500", "3");
    synth_corpus(&b, "loop", "0", "12", "500", "3");
    assert_eq!(tree_hashes(&a), tree_hashes(&b));

    let gt = fs::read_to_string(a.join("gt.csv")).unwrap();
    let rows: Vec<&str> = gt.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    for (j, row) in rows.iter().enumerate() {
        assert_eq!(*row, format!("{},{}", 12 + j, j));
    }
    assert_eq!(fs::read_dir(a.join("map")).unwrap().count(), 13);
}

#[test]
fn describe_writes_one_entry_per_frame_reproducibly() {
    let t = TempDir::new().unwrap();
    let corpus = t.path().join("c");
    synth_corpus(&corpus, "loop", "0.05", "10", "1500", "1");
    let map = corpus.join("map");
    let out = |name: &str, threads: &str| {
        let path = t.path().join(name);
        ok(seqlpd_env(
            &["describe", "--input", s(&map), "--out", s(&path), "--baseline", "--n-sub", "1024"],
            &[("SEQLPD_THREADS", threads)],
        ));
        path
    };
    let (one, again, four) = (out("a.lpdm", "1"), out("b.lpdm", "1"), out("c.lpdm", "4"));
    assert_eq!(sha(&one), sha(&again));
    assert_eq!(sha(&one), sha(&four));
    let m = PlaceMap::load(&one).unwrap();
    assert_eq!(m.len(), 10);
    assert_eq!(m.entries()[3].frame_id, 3);
}

#[test]
fn network_describe_is_thread_invariant() {
    let t = TempDir::new().unwrap();
    let corpus = t.path().join("c");
    synth_corpus(&corpus, "loop", "0", "3", "800", "2");
    let weights = t.path().join("w.lpdw");
    ok(seqlpd(&["init-weights", "--out", s(&weights), "--compact", "--seed", "5"]));
    let out = |name: &str, threads: &str| {
        let path = t.path().join(name);
        ok(seqlpd_env(
            &[
                "describe", "--input", s(&corpus.join("map")), "--out", s(&path), "--weights", s(&weights),
                "--n-sub", "512", "--k-graph", "8",
            ],
            &[("SEQLPD_THREADS", threads)],
        ));
        path
    };
    assert_eq!(sha(&out("a.lpdm", "1")), sha(&out("b.lpdm", "4")));
}

#[test]
fn error_lines() {
    let t = TempDir::new().unwrap();
    let corpus = t.path().join("c");
    synth_corpus(&corpus, "loop", "0", "4", "300", "1");
    let map = t.path().join("m.lpdm");

    fails_with(
        seqlpd(&[
            "describe", "--input", s(&corpus.join("map")), "--out", s(&map), "--weights",
            s(&t.path().join("missing.lpdw")),
        ]),
        "IoError",
    );
    ok(seqlpd(&["describe", "--input", s(&corpus.join("map")), "--out", s(&map), "--baseline", "--n-sub", "256"]));
    fails_with(seqlpd(&["cluster", "--map", s(&map), "--out", s(&t.path().join("c.lpdc")), "--d", "0"]), "InvalidParams");
    fails_with(seqlpd(&["cluster", "--map", s(&corpus.join("gt.csv")), "--out", "x", "--d", "1"]), "FormatError");
    fails_with(seqlpd(&["synth", "--out", s(&t.path().join("z")), "--scenario", "spiral"]), "InvalidParams");
    fails_with(seqlpd(&["synth", "--out", s(&t.path().join("z")), "--noise", "-1"]), "InvalidParams");
    fails_with(seqlpd(&["frobnicate"]), "InvalidParams");
    fails_with(seqlpd_env(&["synth", "--out", "z"], &[("SEQLPD_THREADS", "zero")]), "InvalidParams");

    let empty = t.path().join("empty");
    fs::create_dir(&empty).unwrap();
    fails_with(
        seqlpd(&["eval", "--map", s(&map), "--queries", s(&empty), "--gt-radius", "5", "--baseline"]),
        "EmptyInput",
    );

    let cfg = t.path().join("bad.conf");
    fs::write(&cfg, "window = 5\nwindw = 3\n").unwrap();
    fails_with(seqlpd(&["--config", s(&cfg), "synth", "--out", "z"]), "InvalidParams");

    ok(seqlpd(&["cluster", "--map", s(&map), "--out", s(&t.path().join("c.lpdc")), "--d", "2"]));
    fails_with(
        seqlpd(&[
            "match", "--map", s(&map), "--clusters", s(&t.path().join("c.lpdc")), "--queries", s(&map),
        ]),
        "InsufficientHistory",
    );
}

#[test]
fn cluster_reports_blobs_and_singletons() {
    let t = TempDir::new().unwrap();
    let blobs: Vec<GlobalDescriptor> = synth::blobs(3, 12, DESCRIPTOR_DIM, 0.01, 1.0, 4)
        .into_iter()
        .map(|d| GlobalDescriptor::normalized(d.into_vec()))
        .collect();
    let map = t.path().join("blobs.lpdm");
    write_map(&map, &blobs, 0);
    let out = ok(seqlpd(&["cluster", "--map", s(&map), "--out", s(&t.path().join("b.lpdc")), "--d", "0.5"]));
    assert!(out.contains("K=3\n"), "{out}");
    assert!(out.contains("constraint_satisfied=true"));
    assert!(out.contains("sizes=12,12,12\n"), "{out}");

    let one = t.path().join("one.lpdm");
    write_map(&one, &blobs[..1], 7);
    let out = ok(seqlpd(&["cluster", "--map", s(&one), "--out", s(&t.path().join("o.lpdc")), "--d", "0.5"]));
    assert!(out.contains("K=1\n") && out.contains("distortion=0.000000\n") && out.contains("keyframes=7\n"), "{out}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let t = TempDir::new().unwrap();
    let cfg = t.path().join("run.conf");
    fs::write(&cfg, "# desk run\nseed = 9\n").unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    ok(seqlpd(&["--config", s(&cfg), "synth", "--out", s(&a), "--places", "3", "--points", "100"]));
    ok(seqlpd(&["synth", "--out", s(&b), "--places", "3", "--points", "100", "--seed", "9"]));
    ok(seqlpd(&["--config", s(&cfg), "synth", "--out", s(&c), "--places", "3", "--points", "100", "--seed", "1"]));
    assert_eq!(tree_hashes(&a), tree_hashes(&b));
    assert_ne!(tree_hashes(&a), tree_hashes(&c));
}

#[test]
fn replayed_map_matches_itself() {
    let t = TempDir::new().unwrap();
    let route = LoopParams::new(60, 11);
    let lp = synth::synthetic_loop(&route, 0.0).unwrap();
    let map = t.path().join("m.lpdm");
    lp.map.save(&map).unwrap();
    let clusters = t.path().join("c.lpdc");
    ok(seqlpd(&["cluster", "--map", s(&map), "--out", s(&clusters), "--d", "1.2"]));
    let out = ok(seqlpd(&["match", "--map", s(&map), "--clusters", s(&clusters), "--queries", s(&map)]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 60 - 10 + 1);
    for line in lines {
        assert_eq!(field(line, "accepted"), "true", "{line}");
        assert_eq!(field(line, "score"), "0.000000");
        assert_eq!(field(line, "ref"), field(line, "frame"));
    }
}

#[test]
fn orthogonal_queries_are_never_accepted() {
    let t = TempDir::new().unwrap();
    let route = LoopParams {
        subspace: (0, DESCRIPTOR_DIM / 2),
        ..LoopParams::new(80, 12)
    };
    let lp = synth::synthetic_loop(&route, 0.0).unwrap();
    let map = t.path().join("m.lpdm");
    lp.map.save(&map).unwrap();
    let queries = t.path().join("q.lpdm");
    write_map(&queries, &synth::orthogonal_queries(40, DESCRIPTOR_DIM, DESCRIPTOR_DIM / 2, DESCRIPTOR_DIM, 13), 1000);
    let clusters = t.path().join("c.lpdc");
    ok(seqlpd(&["cluster", "--map", s(&map), "--out", s(&clusters), "--d", "1.2"]));
    let out = ok(seqlpd(&["match", "--map", s(&map), "--clusters", s(&clusters), "--queries", s(&queries)]));
    assert_eq!(out.lines().count(), 31);
    for line in out.lines() {
        assert_eq!(field(line, "ref"), "none", "{line}");
        assert_eq!(field(line, "accepted"), "false");
    }
}

#[test]
fn diffmat_export_traces_the_planted_diagonal() {
    let t = TempDir::new().unwrap();
    let map = t.path().join("m.lpdm");
    write_map(&map, &(0..20).map(unit).collect::<Vec<_>>(), 0);
    let queries = t.path().join("q.lpdm");
    write_map(&queries, &(6..11).map(unit).collect::<Vec<_>>(), 100);
    let clusters = t.path().join("c.lpdc");
    ok(seqlpd(&["cluster", "--map", s(&map), "--out", s(&clusters), "--d", "1.5"]));
    let pgm = t.path().join("d.pgm");
    ok(seqlpd(&[
        "match", "--map", s(&map), "--clusters", s(&clusters), "--queries", s(&queries), "--window", "5",
        "--diffmat", s(&pgm),
    ]));
    let text = fs::read_to_string(&pgm).unwrap();
    let mut tokens = text.split_whitespace();
    assert_eq!(tokens.next(), Some("P2"));
    let dims: Vec<usize> = tokens.by_ref().take(3).map(|x| x.parse().unwrap()).collect();
    assert_eq!(dims, vec![20, 5, 255]);
    let pixels: Vec<u8> = tokens.map(|x| x.parse().unwrap()).collect();
    assert_eq!(pixels.len(), 100);
    // Orthogonal unit vectors are √2 apart: round(127.5·√2) = 180.
    for r in 0..5 {
        for c in 0..20 {
            let want = if c == r + 6 { 0 } else { 180 };
            assert_eq!(pixels[r * 20 + c], want, "pixel ({r}, {c})");
        }
    }

    let csv = t.path().join("d.csv");
    ok(seqlpd(&[
        "match", "--map", s(&map), "--clusters", s(&clusters), "--queries", s(&queries), "--window", "5",
        "--diffmat", s(&csv),
    ]));
    let rows: Vec<Vec<f64>> = fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[2][8], 0.0);
    assert!((rows[2][9] - 2f64.sqrt()).abs() < 1e-6);
}

/// Recall@1 computed directly from the two maps.
fn recall_at_1_oracle(map: &PlaceMap, queries: &PlaceMap, radius: f64) -> f64 {
    let d = |a: &GlobalDescriptor, b: &GlobalDescriptor| -> f64 {
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
    };
    let (mut hits, mut evaluated) = (0, 0);
    for q in queries.entries() {
        let near = |e: &PlaceEntry| e.pose.distance(&q.pose) <= radius;
        if !map.entries().iter().any(near) {
            continue;
        }
        evaluated += 1;
        let mut best = 0;
        for (i, e) in map.entries().iter().enumerate() {
            if d(&q.descriptor, &e.descriptor) < d(&q.descriptor, &map.entries()[best].descriptor) {
                best = i;
            }
        }
        if near(&map.entries()[best]) {
            hits += 1;
        }
    }
    100.0 * hits as f64 / evaluated as f64
}

#[test]
fn synthetic_pipeline_end_to_end() {
    let t = TempDir::new().unwrap();
    let corpus = t.path().join("c");
    synth_corpus(&corpus, "loop", "0.05", "100", "6000", "21");
    let (map, queries) = (t.path().join("map.lpdm"), t.path().join("q.lpdm"));
    ok(seqlpd(&["describe", "--input", s(&corpus.join("map")), "--out", s(&map), "--baseline"]));
    ok(seqlpd(&["describe", "--input", s(&corpus.join("query")), "--out", s(&queries), "--baseline"]));
    let clusters = t.path().join("c.lpdc");
    let summary = ok(seqlpd(&["cluster", "--map", s(&map), "--out", s(&clusters), "--d", "1.0"]));
    assert!(summary.contains("constraint_satisfied="));

    // Describing the query directory inside `match` gives the same answer as
    // passing its LPDM.
    let from_map = ok(seqlpd(&["match", "--map", s(&map), "--clusters", s(&clusters), "--queries", s(&queries)]));
    let from_dir = ok(seqlpd(&[
        "match", "--map", s(&map), "--clusters", s(&clusters), "--queries", s(&corpus.join("query")), "--baseline",
    ]));
    assert_eq!(from_map, from_dir);

    let truth: BTreeMap<u64, u64> = fs::read_to_string(corpus.join("gt.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (q, m) = l.split_once(',').unwrap();
            (q.parse().unwrap(), m.parse().unwrap())
        })
        .collect();
    let lines: Vec<&str> = from_map.lines().collect();
    let good = lines
        .iter()
        .filter(|l| {
            field(l, "accepted") == "true"
                && field(l, "ref").parse::<u64>().unwrap().abs_diff(truth[&field(l, "frame").parse::<u64>().unwrap()]) <= 1
        })
        .count();
    assert!(good as f64 >= 0.95 * lines.len() as f64, "{good}/{}", lines.len());

    let csv = ok(seqlpd(&["eval", "--map", s(&map), "--queries", s(&queries), "--gt-radius", "5", "--n", "1,5"]));
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("metric,value,n,gt_radius,db_size"));
    let recall1: f64 = rows.next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let want = recall_at_1_oracle(&PlaceMap::load(&map).unwrap(), &PlaceMap::load(&queries).unwrap(), 5.0);
    assert!((recall1 - want).abs() < 1e-3, "{recall1} vs {want}");
    assert!(csv.contains("recall@1%,") && csv.contains("seq_protocol,"));

    let selfeval = ok(seqlpd(&["eval", "--map", s(&map), "--queries", s(&map), "--gt-radius", "5"]));
    assert!(selfeval.contains("recall@1,100.0000,1,5,100"), "{selfeval}");
}
