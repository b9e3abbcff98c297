//! Graph file sets, synthetic generators and split management.
//!
//! A dataset directory holds:
//!
//! * `edges.tsv`: `src<TAB>dst`, 0-based, each undirected pair once
//! * `features.tsv`: one row of tab-separated decimals per node, in id order
//! * `labels.tsv`: `id<TAB>class` for labeled nodes only
//! * `split.tsv` (optional): `id<TAB>{train|val|test}`
//!
//! Blank lines and lines starting with `#` are skipped.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split, Topology};
use crate::noise::stream_rng;

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLIT_FILE: &str = "split.tsv";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank, non-comment lines with their 1-based numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            None
        } else {
            Some((i + 1, t.split('\t').map(str::trim).collect()))
        }
    })
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn expect_fields<'a>(path: &Path, line: usize, fields: &'a [&'a str], n: usize) -> Result<&'a [&'a str]> {
    if fields.len() != n {
        return Err(parse_err(path, line, format!("expected {n} tab-separated fields, found {}", fields.len())));
    }
    Ok(fields)
}

fn parse_id(path: &Path, line: usize, s: &str, n: usize) -> Result<usize> {
    let id: usize = s
        .parse()
        .map_err(|_| parse_err(path, line, format!("`{s}` is not a node id")))?;
    if id >= n {
        return Err(parse_err(path, line, format!("node id {id} is out of range (n = {n})")));
    }
    Ok(id)
}

fn load_features(path: &Path) -> Result<DMatrix<f64>> {
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (line, fields) in records(&text) {
        let row = fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line, format!("`{f}` is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(path, line, format!("row has {} values, expected {w}", row.len())));
            }
            _ => {}
        }
        rows.push(row);
    }
    let Some(width) = width else {
        return Err(parse_err(path, 0, "no feature rows"));
    };
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

fn load_edges(path: &Path, n: usize) -> Result<Topology> {
    let text = read(path)?;
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for (line, fields) in records(&text) {
        let f = expect_fields(path, line, &fields, 2)?;
        let u = parse_id(path, line, f[0], n)?;
        let v = parse_id(path, line, f[1], n)?;
        if u == v {
            return Err(parse_err(path, line, format!("self-loop on node {u}")));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(parse_err(path, line, format!("duplicate edge {u}-{v}")));
        }
        edges.push((u, v));
    }
    Topology::new(n, edges)
}

fn load_labels(path: &Path, n: usize) -> Result<Vec<Option<usize>>> {
    let text = read(path)?;
    let mut labels = vec![None; n];
    for (line, fields) in records(&text) {
        let f = expect_fields(path, line, &fields, 2)?;
        let id = parse_id(path, line, f[0], n)?;
        let class: usize = f[1]
            .parse()
            .map_err(|_| parse_err(path, line, format!("`{}` is not a class index", f[1])))?;
        if labels[id].is_some() {
            return Err(parse_err(path, line, format!("node {id} is labeled twice")));
        }
        labels[id] = Some(class);
    }
    Ok(labels)
}

fn load_split(path: &Path, labels: &[Option<usize>]) -> Result<Vec<Split>> {
    let n = labels.len();
    let mut split = vec![Split::Unlabeled; n];
    if !path.exists() {
        return Ok(split);
    }
    let text = read(path)?;
    let mut seen = vec![false; n];
    for (line, fields) in records(&text) {
        let f = expect_fields(path, line, &fields, 2)?;
        let id = parse_id(path, line, f[0], n)?;
        let tag = match f[1] {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => return Err(parse_err(path, line, format!("unknown split `{other}`"))),
        };
        if seen[id] {
            return Err(parse_err(path, line, format!("node {id} appears twice")));
        }
        if labels[id].is_none() {
            return Err(parse_err(path, line, format!("node {id} is in a split but has no label")));
        }
        seen[id] = true;
        split[id] = tag;
    }
    Ok(split)
}

/// Loads and validates the graph file set in `dir`.
pub fn load_dataset(dir: &Path) -> Result<Graph> {
    let features = load_features(&dir.join(FEATURES_FILE))?;
    let n = features.nrows();
    let topology = load_edges(&dir.join(EDGES_FILE), n)?;
    let labels = load_labels(&dir.join(LABELS_FILE), n)?;
    let split = load_split(&dir.join(SPLIT_FILE), &labels)?;
    let classes = labels.iter().flatten().max().map_or(0, |&k| k + 1);
    if classes == 0 {
        return Err(parse_err(&dir.join(LABELS_FILE), 0, "no labeled nodes"));
    }
    Graph::new(topology, features, labels, classes, split)
}

/// Paths of the files `save_dataset` writes into `dir`.
pub fn dataset_files(dir: &Path) -> Vec<PathBuf> {
    [EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLIT_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

/// Writes `g` in the canonical layout: edges sorted with `src < dst`,
/// labels and split in id order.
pub fn save_dataset(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut edges = String::new();
    for &(u, v) in g.topology().edges() {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    let mut features = String::new();
    for row in g.features().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(features, "{}", cells.join("\t"));
    }
    let mut labels = String::new();
    let mut split = String::new();
    for i in 0..g.node_count() {
        if let Some(k) = g.labels()[i] {
            let _ = writeln!(labels, "{i}\t{k}");
        }
        if g.split()[i] != Split::Unlabeled {
            let _ = writeln!(split, "{i}\t{}", g.split()[i].as_str());
        }
    }
    for (name, body) in [
        (EDGES_FILE, edges),
        (FEATURES_FILE, features),
        (LABELS_FILE, labels),
        (SPLIT_FILE, split),
    ] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Stochastic block model: edge probability depends on the class pair.
    Sbm,
    /// Class blobs for features; edges drawn independently of labels.
    BlobsOnGraph,
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sbm" => Ok(SyntheticKind::Sbm),
            "blobs-on-graph" => Ok(SyntheticKind::BlobsOnGraph),
            other => Err(format!("unknown generator `{other}` (expected sbm or blobs-on-graph)")),
        }
    }
}

impl SyntheticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::Sbm => "sbm",
            SyntheticKind::BlobsOnGraph => "blobs-on-graph",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub classes: usize,
    /// Edge probability within a class.
    pub p_intra: f64,
    /// Edge probability across classes (every pair for `blobs-on-graph`).
    pub p_inter: f64,
    pub feature_dim: usize,
    /// Standard deviation of the isotropic feature noise.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: SyntheticKind::Sbm,
            n: 400,
            classes: 4,
            p_intra: 0.06,
            p_inter: 0.005,
            feature_dim: 16,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_intra", self.p_intra), ("p_inter", self.p_inter)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(name, format!("probability must lie in [0, 1], got {p}")));
            }
        }
        if self.classes == 0 || self.n < self.classes {
            return Err(Error::param("n", format!("need n >= classes >= 1, got n = {} and classes = {}", self.n, self.classes)));
        }
        if self.feature_dim < self.classes {
            return Err(Error::param("feature_dim", "feature_dim must be at least the number of classes"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::param("feature_noise", "must be a finite non-negative number"));
        }
        Ok(())
    }
}

/// Samples a labeled graph from `spec`. Every node is labeled and the split
/// is left unassigned; see [`make_split`].
pub fn generate_sbm(spec: &SyntheticSpec) -> Result<Graph> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = stream_rng(spec.seed, 0);
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = match spec.kind {
                SyntheticKind::Sbm if labels[u] == labels[v] => spec.p_intra,
                _ => spec.p_inter,
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let features = DMatrix::from_fn(n, spec.feature_dim, |i, j| {
        let mean = if j == labels[i] { 1.0 } else { 0.0 };
        let e: f64 = rng.sample(StandardNormal);
        mean + spec.feature_noise * e
    });
    Graph::new(
        Topology::new(n, edges)?,
        features,
        labels.into_iter().map(Some).collect(),
        spec.classes,
        vec![Split::Unlabeled; n],
    )
}

/// Stratified split: `per_class_train` nodes of each class for training,
/// then `val_count` and `test_count` from the remaining labeled nodes.
pub fn make_split(g: &Graph, per_class_train: usize, val_count: usize, test_count: usize, seed: u64) -> Result<Graph> {
    let mut rng = stream_rng(seed, 0);
    let mut split = vec![Split::Unlabeled; g.node_count()];
    let mut rest = Vec::new();
    for k in 0..g.num_classes() {
        let mut members: Vec<usize> = (0..g.node_count()).filter(|&i| g.labels()[i] == Some(k)).collect();
        if members.len() < per_class_train {
            return Err(Error::param(
                "per_class_train",
                format!("class {k} has {} labeled nodes, {per_class_train} requested", members.len()),
            ));
        }
        members.shuffle(&mut rng);
        for &i in &members[..per_class_train] {
            split[i] = Split::Train;
        }
        rest.extend_from_slice(&members[per_class_train..]);
    }
    if rest.len() < val_count + test_count {
        return Err(Error::param(
            "test_count",
            format!("{} labeled nodes remain, {} requested for val and test", rest.len(), val_count + test_count),
        ));
    }
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    for &i in &rest[..val_count] {
        split[i] = Split::Val;
    }
    for &i in &rest[val_count..val_count + test_count] {
        split[i] = Split::Test;
    }
    g.with_split(split)
}
