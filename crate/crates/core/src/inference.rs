//! Scoring with a released model, and evaluation metrics.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::artifact::ModelArtifact;
use crate::encoder::{argmax, encode, normalize_rows};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph};
use crate::propagation::{aggregate, format_steps};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// One hop over the query graph: `R̂ = (1-α_I)Ã + α_I I` per nonzero step.
    Private,
    /// The training-time propagation applied to the query graph.
    Public,
}

impl InferenceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InferenceMode::Private => "private",
            InferenceMode::Public => "public",
        }
    }
}

impl std::str::FromStr for InferenceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "private" => Ok(InferenceMode::Private),
            "public" => Ok(InferenceMode::Public),
            other => Err(format!("unknown inference mode `{other}` (expected private or public)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub mode: InferenceMode,
    /// Self weight of the one-hop operator; defaults to the training `α`.
    pub alpha_i: Option<f64>,
    /// Scale concatenated private-mode blocks by `1/s`, as in training.
    pub one_over_s: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            mode: InferenceMode::Private,
            alpha_i: None,
            one_over_s: true,
        }
    }
}

impl InferenceConfig {
    pub fn resolved_alpha_i(&self, artifact: &ModelArtifact) -> f64 {
        self.alpha_i.unwrap_or(artifact.propagation.alpha)
    }
}

/// Feature matrix fed to `Θ` for every node of `g`.
pub fn inference_features(artifact: &ModelArtifact, g: &Graph, cfg: &InferenceConfig) -> Result<DMatrix<f64>> {
    if g.features().ncols() != artifact.encoder.input_dim() {
        return Err(Error::Dimension(format!(
            "dataset has {} feature columns, the model expects {}",
            g.features().ncols(),
            artifact.encoder.input_dim()
        )));
    }
    let x = normalize_rows(&encode(&artifact.encoder, g.features())?);
    let adj = normalize_adjacency(g.topology(), artifact.clip)?;
    match cfg.mode {
        InferenceMode::Public => Ok(aggregate(&adj, &x, &artifact.propagation)?.z),
        InferenceMode::Private => {
            let alpha_i = cfg.resolved_alpha_i(artifact);
            if !(0.0..=1.0).contains(&alpha_i) {
                return Err(Error::param("alpha_i", format!("must lie in [0, 1], got {alpha_i}")));
            }
            let steps = &artifact.propagation.steps;
            let (n, d1) = x.shape();
            let one_hop = if alpha_i == 1.0 || steps.iter().all(|m| m.is_zero()) {
                x.clone()
            } else {
                adj.mul_dense(&x) * (1.0 - alpha_i) + &x * alpha_i
            };
            let scale = if cfg.one_over_s { steps.len() as f64 } else { 1.0 };
            let mut z = DMatrix::zeros(n, steps.len() * d1);
            for (b, m) in steps.iter().enumerate() {
                let block = if m.is_zero() { &x } else { &one_hop };
                z.view_mut((0, b * d1), (n, d1)).copy_from(&(block / scale));
            }
            Ok(z)
        }
    }
}

/// `n × c` score matrix.
pub fn infer(artifact: &ModelArtifact, g: &Graph, cfg: &InferenceConfig) -> Result<DMatrix<f64>> {
    let z = inference_features(artifact, g, cfg)?;
    Ok(z * &artifact.theta)
}

/// Row-wise argmax, ties to the lowest class.
pub fn predict(scores: &DMatrix<f64>) -> Vec<usize> {
    (0..scores.nrows())
        .map(|i| argmax(scores.row(i).iter().copied()))
        .collect()
}

/// Micro-averaged F1 over the masked nodes, which equals accuracy for
/// single-label prediction.
pub fn micro_f1(scores: &DMatrix<f64>, labels: &[Option<usize>], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::param("mask", "evaluation mask is empty"));
    }
    let mut correct = 0usize;
    for &i in mask {
        let truth = labels
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::param("mask", format!("node {i} has no label")))?;
        if argmax(scores.row(i).iter().copied()) == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / mask.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub support: usize,
    pub predicted: usize,
    pub correct: usize,
}

pub fn class_counts(scores: &DMatrix<f64>, labels: &[Option<usize>], mask: &[usize], classes: usize) -> Vec<ClassCounts> {
    let mut out = vec![
        ClassCounts {
            support: 0,
            predicted: 0,
            correct: 0
        };
        classes
    ];
    for &i in mask {
        let p = argmax(scores.row(i).iter().copied());
        out[p].predicted += 1;
        if let Some(t) = labels[i] {
            out[t].support += 1;
            if t == p {
                out[t].correct += 1;
            }
        }
    }
    out
}

/// `id<TAB>class<TAB>score_0…` with a header row.
pub fn predictions_tsv(scores: &DMatrix<f64>) -> String {
    let mut out = String::from("id\tclass");
    for j in 0..scores.ncols() {
        let _ = write!(out, "\tscore_{j}");
    }
    out.push('\n');
    for (i, p) in predict(scores).into_iter().enumerate() {
        let _ = write!(out, "{i}\t{p}");
        for s in scores.row(i).iter() {
            let _ = write!(out, "\t{s}");
        }
        out.push('\n');
    }
    out
}

/// `key = value` metrics report for one evaluation split.
pub fn metrics_report(
    artifact: &ModelArtifact,
    cfg: &InferenceConfig,
    scores: &DMatrix<f64>,
    labels: &[Option<usize>],
    split_name: &str,
    mask: &[usize],
) -> Result<String> {
    let f1 = micro_f1(scores, labels, mask)?;
    if let Some(&i) = mask.iter().find(|&&i| labels[i].is_some_and(|t| t >= scores.ncols())) {
        return Err(Error::Dimension(format!(
            "node {i} has label {} but the model scores {} classes",
            labels[i].unwrap_or_default(),
            scores.ncols()
        )));
    }
    let mut out = String::new();
    let _ = writeln!(out, "split = {split_name}");
    let _ = writeln!(out, "nodes = {}", mask.len());
    let _ = writeln!(out, "micro_f1 = {f1}");
    let _ = writeln!(out, "mode = {}", cfg.mode.as_str());
    if cfg.mode == InferenceMode::Private {
        let _ = writeln!(out, "alpha_i = {}", cfg.resolved_alpha_i(artifact));
        let _ = writeln!(out, "one_over_s = {}", cfg.one_over_s);
    }
    let _ = writeln!(out, "alpha = {}", artifact.propagation.alpha);
    let _ = writeln!(out, "steps = {}", format_steps(&artifact.propagation.steps));
    let _ = writeln!(out, "epsilon = {}", artifact.calibration.budget.epsilon);
    let _ = writeln!(out, "delta = {}", artifact.calibration.budget.delta);
    for (k, c) in class_counts(scores, labels, mask, scores.ncols()).iter().enumerate() {
        let _ = writeln!(
            out,
            "class_{k} = support {} predicted {} correct {}",
            c.support, c.predicted, c.correct
        );
    }
    Ok(out)
}
