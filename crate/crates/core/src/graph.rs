//! Undirected graphs, self-loop row normalization and edge-level neighbors.
//!
//! A [`Topology`] holds the private part of a dataset (the edge set); a
//! [`Graph`] pairs it with the public node features, labels and split.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default off-diagonal clip for the normalized adjacency. At 1/2 the clip
/// never binds and the normalization is plain `D^-1 (A + I)`.
pub const DEFAULT_CLIP: f64 = 0.5;

/// Role of a node in the train/val/test protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unlabeled,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unlabeled" => Ok(Split::Unlabeled),
            other => Err(format!("unknown split tag `{other}`")),
        }
    }
}

/// Undirected simple graph on nodes `0..n`.
///
/// Edges are kept as a sorted list of `(u, v)` pairs with `u < v`, so two
/// topologies built from the same edge set compare equal regardless of the
/// order the edges were supplied in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology, rejecting self-loops, duplicates (in either
    /// orientation) and out-of-range endpoints.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) has an endpoint outside [0, {n})"
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop on node {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(Self::from_sorted(n, set.into_iter().collect()))
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Result<Self> {
        Self::new(n, std::iter::empty())
    }

    fn from_sorted(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Topology {
            n,
            edges,
            neighbors,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Sorted `(u, v)` pairs with `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.n && self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Applies a single edge change. Fails if the change does not apply
    /// (removing an absent edge or adding a present one).
    pub fn apply(&self, change: EdgeChange) -> Result<Self> {
        let (u, v) = (change.u.min(change.v), change.u.max(change.v));
        if u == v || v >= self.n {
            return Err(Error::InvalidGraph(format!("cannot apply {change}")));
        }
        let pos = self.edges.binary_search(&(u, v));
        let mut edges = self.edges.clone();
        match (change.kind, pos) {
            (ChangeKind::Remove, Ok(i)) => {
                edges.remove(i);
            }
            (ChangeKind::Add, Err(i)) => edges.insert(i, (u, v)),
            _ => return Err(Error::InvalidGraph(format!("cannot apply {change}"))),
        }
        Ok(Self::from_sorted(self.n, edges))
    }

    /// Every single-edge change that yields an edge-level neighbor: one
    /// removal per existing edge followed by one addition per absent pair.
    /// There are `n(n-1)/2` of them in total.
    pub fn neighbor_changes(&self) -> Vec<EdgeChange> {
        let mut out: Vec<EdgeChange> = self
            .edges
            .iter()
            .map(|&(u, v)| EdgeChange {
                u,
                v,
                kind: ChangeKind::Remove,
            })
            .collect();
        for u in 0..self.n {
            for v in (u + 1)..self.n {
                if !self.has_edge(u, v) {
                    out.push(EdgeChange {
                        u,
                        v,
                        kind: ChangeKind::Add,
                    });
                }
            }
        }
        out
    }

    /// All edge-level neighboring topologies, paired with the change that
    /// produced each.
    pub fn neighboring_topologies(&self) -> Vec<(EdgeChange, Topology)> {
        self.neighbor_changes()
            .into_iter()
            .map(|c| {
                let t = self.apply(c).expect("enumerated change always applies");
                (c, t)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Add,
    Remove,
}

impl ChangeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::Add => "add",
            ChangeKind::Remove => "remove",
        }
    }
}

/// One edge added to or removed from a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeChange {
    pub u: usize,
    pub v: usize,
    pub kind: ChangeKind,
}

impl fmt::Display for EdgeChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}, {})", self.kind.as_str(), self.u, self.v)
    }
}

/// A node-classification dataset: private edges, public features, labels
/// and the split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    topology: Topology,
    features: DMatrix<f64>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    split: Vec<Split>,
}

impl Graph {
    pub fn new(
        topology: Topology,
        features: DMatrix<f64>,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = topology.node_count();
        if features.nrows() != n {
            return Err(Error::Dimension(format!(
                "feature matrix has {} rows for {n} nodes",
                features.nrows()
            )));
        }
        if labels.len() != n || split.len() != n {
            return Err(Error::Dimension(format!(
                "labels ({}) and split ({}) must have one entry per node ({n})",
                labels.len(),
                split.len()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGraph("feature matrix has non-finite entries".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if let Some(k) = l {
                if *k >= num_classes {
                    return Err(Error::InvalidGraph(format!(
                        "node {i} has class {k} but only {num_classes} classes exist"
                    )));
                }
            }
        }
        for (i, s) in split.iter().enumerate() {
            if *s != Split::Unlabeled && labels[i].is_none() {
                return Err(Error::InvalidGraph(format!(
                    "node {i} is in the {} split but has no label",
                    s.as_str()
                )));
            }
        }
        Ok(Graph {
            topology,
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&i| self.split[i] == split)
            .collect()
    }

    /// One-hot label matrix; rows of unlabeled nodes are all zero.
    pub fn label_matrix(&self) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.node_count(), self.num_classes);
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(k) = l {
                y[(i, *k)] = 1.0;
            }
        }
        y
    }

    /// Same nodes, features and labels on a different edge set.
    pub fn with_topology(&self, topology: Topology) -> Result<Self> {
        if topology.node_count() != self.node_count() {
            return Err(Error::Dimension("topology node count differs".into()));
        }
        Ok(Graph {
            topology,
            ..self.clone()
        })
    }

    pub fn with_split(&self, split: Vec<Split>) -> Result<Self> {
        Graph::new(
            self.topology.clone(),
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
            split,
        )
    }

    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Self> {
        Graph::new(
            self.topology.clone(),
            features,
            self.labels.clone(),
            self.num_classes,
            self.split.clone(),
        )
    }

    /// Every graph that differs from this one by exactly one edge.
    pub fn neighboring_graphs(&self) -> Vec<(EdgeChange, Graph)> {
        self.topology
            .neighboring_topologies()
            .into_iter()
            .map(|(c, t)| {
                let g = self.with_topology(t).expect("same node count");
                (c, g)
            })
            .collect()
    }
}

/// Row-stochastic normalized adjacency with self-loops, stored row-sparse.
///
/// Off-diagonal `(i, j)` is `min(1/(k_i + 1), clip)` when `i ~ j`, the
/// diagonal takes the remaining mass of the row.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    clip: f64,
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    /// Nonzero entries of row `i`, sorted by column, diagonal included.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.node_count();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// `Ã · rhs` without materializing `Ã`.
    pub fn mul_dense(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(rhs.nrows(), self.node_count(), "row count of rhs");
        let cols = rhs.ncols();
        let mut out = DMatrix::zeros(self.node_count(), cols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                for c in 0..cols {
                    out[(i, c)] += w * rhs[(j, c)];
                }
            }
        }
        out
    }
}

/// Self-loop normalization `D^-1 (A + I)` with off-diagonals clipped at `clip`.
pub fn normalize_adjacency(topology: &Topology, clip: f64) -> Result<NormalizedAdjacency> {
    if !(clip > 0.0 && clip <= 0.5) {
        return Err(Error::param("clip", format!("must lie in (0, 1/2], got {clip}")));
    }
    let rows = (0..topology.node_count())
        .map(|i| {
            let nbrs = topology.neighbors(i);
            let plain = 1.0 / (nbrs.len() as f64 + 1.0);
            let w = plain.min(clip);
            let diag = if w == plain { plain } else { 1.0 - w * nbrs.len() as f64 };
            let mut row: Vec<(usize, f64)> = nbrs.iter().map(|&j| (j, w)).collect();
            let at = row.partition_point(|&(j, _)| j < i);
            row.insert(at, (i, diag));
            row
        })
        .collect();
    Ok(NormalizedAdjacency { clip, rows })
}

/// Mean over nodes of the fraction of neighbors sharing the node's label.
///
/// Every node must be labeled and have at least one neighbor.
pub fn homophily_ratio(g: &Graph) -> Result<f64> {
    let topo = g.topology();
    let mut total = 0.0;
    for v in 0..g.node_count() {
        let lv = g.labels()[v]
            .ok_or_else(|| Error::InvalidGraph(format!("node {v} is unlabeled")))?;
        let nbrs = topo.neighbors(v);
        if nbrs.is_empty() {
            return Err(Error::InvalidGraph(format!(
                "node {v} is isolated; homophily ratio undefined"
            )));
        }
        total += same_label_fraction(g, lv, nbrs)?;
    }
    Ok(total / g.node_count() as f64)
}

/// Like [`homophily_ratio`] but averages only over nodes that have at least
/// one neighbor. Returns `None` when every node is isolated.
pub fn homophily_ratio_connected(g: &Graph) -> Result<Option<f64>> {
    let topo = g.topology();
    let mut total = 0.0;
    let mut count = 0usize;
    for v in 0..g.node_count() {
        let nbrs = topo.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let lv = g.labels()[v]
            .ok_or_else(|| Error::InvalidGraph(format!("node {v} is unlabeled")))?;
        total += same_label_fraction(g, lv, nbrs)?;
        count += 1;
    }
    Ok((count > 0).then(|| total / count as f64))
}

fn same_label_fraction(g: &Graph, label: usize, nbrs: &[usize]) -> Result<f64> {
    let mut same = 0usize;
    for &u in nbrs {
        let lu = g.labels()[u]
            .ok_or_else(|| Error::InvalidGraph(format!("node {u} is unlabeled")))?;
        if lu == label {
            same += 1;
        }
    }
    Ok(same as f64 / nbrs.len() as f64)
}
