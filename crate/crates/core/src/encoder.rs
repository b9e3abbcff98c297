//! Non-private MLP feature encoder.
//!
//! The trunk maps `d0 -> h -> d1` with a tanh hidden layer and an identity
//! output layer; a linear softmax head `d1 -> c` is trained jointly with
//! cross-entropy on the labeled training nodes. Only node features, labels
//! and the split are read, never the edge set.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::noise::stream_rng;

/// Stream id reserved for encoder weight initialization.
const INIT_STREAM: u64 = 0x656e_636f_6465_72;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Output width `d1`.
    pub d1: usize,
    /// Hidden width `h`.
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Whether the trunk layers carry bias terms.
    pub bias: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d1: 16,
            hidden: 64,
            epochs: 300,
            lr: 0.5,
            seed: 0,
            bias: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.hidden == 0 {
            return Err(Error::param("d1", "encoder widths must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", format!("must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    #[serde(with = "crate::artifact::matrix_serde")]
    pub w_hidden: DMatrix<f64>,
    #[serde(with = "crate::artifact::vector_serde")]
    pub b_hidden: DVector<f64>,
    #[serde(with = "crate::artifact::matrix_serde")]
    pub w_out: DMatrix<f64>,
    #[serde(with = "crate::artifact::vector_serde")]
    pub b_out: DVector<f64>,
    #[serde(with = "crate::artifact::matrix_serde")]
    pub w_head: DMatrix<f64>,
    #[serde(with = "crate::artifact::vector_serde")]
    pub b_head: DVector<f64>,
    pub hidden_activation: String,
    pub output_activation: String,
    pub bias: bool,
    /// Head accuracy on the training nodes after fitting.
    pub train_accuracy: f64,
}

impl EncoderModel {
    pub fn input_dim(&self) -> usize {
        self.w_hidden.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w_head.ncols()
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "features have {} columns, encoder expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut hidden = x * &self.w_hidden;
        add_row(&mut hidden, &self.b_hidden);
        hidden.apply(|v| *v = v.tanh());
        let mut out = &hidden * &self.w_out;
        add_row(&mut out, &self.b_out);
        (hidden, out)
    }

    fn head_logits(&self, encoded: &DMatrix<f64>) -> DMatrix<f64> {
        let mut logits = encoded * &self.w_head;
        add_row(&mut logits, &self.b_head);
        logits
    }

    /// Class scores of the classification head.
    pub fn predict_logits(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let (_, out) = self.forward(x);
        Ok(self.head_logits(&out))
    }
}

fn add_row(m: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for mut row in m.row_iter_mut() {
        row += bias.transpose();
    }
}

fn uniform_init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Fits the encoder on the `Split::Train` rows of `features`.
pub fn fit_encoder_on(
    features: &DMatrix<f64>,
    labels: &[Option<usize>],
    split: &[Split],
    classes: usize,
    cfg: &EncoderConfig,
) -> Result<EncoderModel> {
    cfg.validate()?;
    let train: Vec<usize> = (0..split.len()).filter(|&i| split[i] == Split::Train).collect();
    if train.is_empty() {
        return Err(Error::InvalidGraph("the train split is empty".into()));
    }
    let mut present = vec![false; classes];
    let mut targets = Vec::with_capacity(train.len());
    for &i in &train {
        let k = labels[i].ok_or_else(|| Error::InvalidGraph(format!("train node {i} has no label")))?;
        present[k] = true;
        targets.push(k);
    }
    if let Some(k) = present.iter().position(|p| !p) {
        return Err(Error::InvalidGraph(format!("class {k} has no training node")));
    }

    let x = features.select_rows(train.iter());
    let n = train.len() as f64;
    let mut y = DMatrix::zeros(train.len(), classes);
    for (r, &k) in targets.iter().enumerate() {
        y[(r, k)] = 1.0;
    }

    let mut rng = stream_rng(cfg.seed, INIT_STREAM);
    let d0 = features.ncols();
    let mut model = EncoderModel {
        w_hidden: uniform_init(d0, cfg.hidden, &mut rng),
        b_hidden: DVector::zeros(cfg.hidden),
        w_out: uniform_init(cfg.hidden, cfg.d1, &mut rng),
        b_out: DVector::zeros(cfg.d1),
        w_head: uniform_init(cfg.d1, classes, &mut rng),
        b_head: DVector::zeros(classes),
        hidden_activation: "tanh".into(),
        output_activation: "identity".into(),
        bias: cfg.bias,
        train_accuracy: 0.0,
    };

    for _ in 0..cfg.epochs {
        let (hidden, out) = model.forward(&x);
        let probs = softmax_rows(&model.head_logits(&out));
        let d_logits = (probs - &y) / n;
        let g_head = out.tr_mul(&d_logits);
        let g_b_head = d_logits.row_sum().transpose();
        let d_out = &d_logits * model.w_head.transpose();
        let g_out = hidden.tr_mul(&d_out);
        let g_b_out = d_out.row_sum().transpose();
        let mut d_hidden = &d_out * model.w_out.transpose();
        d_hidden.zip_apply(&hidden, |g, h| *g *= 1.0 - h * h);
        let g_hidden = x.tr_mul(&d_hidden);
        let g_b_hidden = d_hidden.row_sum().transpose();

        model.w_head -= g_head * cfg.lr;
        model.b_head -= g_b_head * cfg.lr;
        model.w_out -= g_out * cfg.lr;
        model.w_hidden -= g_hidden * cfg.lr;
        if cfg.bias {
            model.b_out -= g_b_out * cfg.lr;
            model.b_hidden -= g_b_hidden * cfg.lr;
        }
    }

    let logits = model.predict_logits(&x)?;
    let correct = targets
        .iter()
        .enumerate()
        .filter(|(r, &k)| argmax(logits.row(*r).iter().copied()) == k)
        .count();
    model.train_accuracy = correct as f64 / n;
    Ok(model)
}

/// Fits the encoder on a graph's public data. The edge set is never read.
pub fn fit_encoder(g: &Graph, cfg: &EncoderConfig) -> Result<EncoderModel> {
    fit_encoder_on(g.features(), g.labels(), g.split(), g.num_classes(), cfg)
}

/// Applies the trained trunk to every row of `x`.
pub fn encode(model: &EncoderModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.check_input(x)?;
    Ok(model.forward(x).1)
}

/// Scales each row to unit L2 norm; zero rows stay zero.
pub fn normalize_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoLabelMode {
    None,
    All,
}

impl std::str::FromStr for PseudoLabelMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(PseudoLabelMode::None),
            "all" => Ok(PseudoLabelMode::All),
            other => Err(format!("unknown pseudo-label mode `{other}` (expected none or all)")),
        }
    }
}

/// Rows that enter the private objective and their one-hot targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTargets {
    /// Node ids, in ascending order; `n1 = nodes.len()`.
    pub nodes: Vec<usize>,
    /// `n1 × c`.
    pub y: DMatrix<f64>,
}

impl TrainingTargets {
    pub fn n1(&self) -> usize {
        self.nodes.len()
    }
}

/// Builds the training set: the labeled train split, optionally extended to
/// every other node with the encoder head's argmax prediction.
pub fn pseudo_label(model: &EncoderModel, g: &Graph, mode: PseudoLabelMode) -> Result<TrainingTargets> {
    let c = g.num_classes();
    let predicted = match mode {
        PseudoLabelMode::None => None,
        PseudoLabelMode::All => Some(model.predict_logits(g.features())?),
    };
    let mut nodes = Vec::new();
    let mut classes = Vec::new();
    for i in 0..g.node_count() {
        if g.split()[i] == Split::Train {
            nodes.push(i);
            classes.push(g.labels()[i].expect("train nodes are labeled"));
        } else if let Some(logits) = &predicted {
            nodes.push(i);
            classes.push(argmax(logits.row(i).iter().copied()));
        }
    }
    let mut y = DMatrix::zeros(nodes.len(), c);
    for (r, &k) in classes.iter().enumerate() {
        y[(r, k)] = 1.0;
    }
    Ok(TrainingTargets { nodes, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Topology;
    use rand_distr::StandardNormal;

    /// Two well separated Gaussian blobs in 3 dimensions.
    fn blobs(n: usize, seed: u64) -> Graph {
        let mut rng = stream_rng(seed, 99);
        let mut x = DMatrix::zeros(n, 3);
        let mut labels = Vec::new();
        let mut split = Vec::new();
        for i in 0..n {
            let k = i % 2;
            let center = if k == 0 { [2.0, 0.0, 1.0] } else { [-2.0, 0.5, -1.0] };
            for j in 0..3 {
                let e: f64 = rng.sample(StandardNormal);
                x[(i, j)] = center[j] + 0.5 * e;
            }
            labels.push(Some(k));
            split.push(if i < n / 2 { Split::Train } else { Split::Test });
        }
        Graph::new(Topology::empty(n).unwrap(), x, labels, 2, split).unwrap()
    }

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            d1: 4,
            hidden: 8,
            epochs: 200,
            lr: 0.5,
            seed: 7,
            bias: true,
        }
    }

    #[test]
    fn separable_blobs_train_accuracy() {
        let g = blobs(80, 1);
        let m = fit_encoder(&g, &cfg()).unwrap();
        assert!(m.train_accuracy >= 0.99, "{}", m.train_accuracy);
    }

    #[test]
    fn deterministic_given_seed() {
        let g = blobs(40, 2);
        assert_eq!(fit_encoder(&g, &cfg()).unwrap(), fit_encoder(&g, &cfg()).unwrap());
    }

    #[test]
    fn ignores_non_training_rows_and_edges() {
        let g = blobs(40, 3);
        let base = fit_encoder(&g, &cfg()).unwrap();

        let mut x = g.features().clone();
        for i in g.nodes_in(Split::Test) {
            x.row_mut(i).fill(123.0);
        }
        let shuffled = g.with_features(x).unwrap();
        assert_eq!(fit_encoder(&shuffled, &cfg()).unwrap(), base);

        let wired = g
            .with_topology(Topology::new(40, [(0, 1), (5, 30), (12, 13)]).unwrap())
            .unwrap();
        assert_eq!(fit_encoder(&wired, &cfg()).unwrap(), base);
        assert_eq!(
            encode(&base, g.features()).unwrap(),
            encode(&fit_encoder(&wired, &cfg()).unwrap(), wired.features()).unwrap()
        );
    }

    #[test]
    fn encode_shape_and_purity() {
        let g = blobs(20, 4);
        let m = fit_encoder(&g, &cfg()).unwrap();
        let z = encode(&m, g.features()).unwrap();
        assert_eq!(z.shape(), (20, 4));
        assert_eq!(z, encode(&m, g.features()).unwrap());
        assert!(matches!(encode(&m, &DMatrix::zeros(3, 5)), Err(Error::Dimension(_))));
    }

    #[test]
    fn bias_free_trunk_maps_zero_to_zero() {
        let g = blobs(20, 5);
        let mut c = cfg();
        c.bias = false;
        let m = fit_encoder(&g, &c).unwrap();
        let z = encode(&m, &DMatrix::zeros(2, 3)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fit_errors() {
        let g = blobs(10, 6);
        let none = g.with_split(vec![Split::Test; 10]).unwrap();
        assert!(fit_encoder(&none, &cfg()).is_err());
        let mut split = vec![Split::Test; 10];
        split[0] = Split::Train;
        split[2] = Split::Train;
        let one_class = g.with_split(split).unwrap();
        assert!(fit_encoder(&one_class, &cfg()).is_err());
    }

    #[test]
    fn pseudo_label_modes() {
        let g = blobs(60, 8);
        let m = fit_encoder(&g, &cfg()).unwrap();

        let none = pseudo_label(&m, &g, PseudoLabelMode::None).unwrap();
        assert_eq!(none.nodes, g.nodes_in(Split::Train));
        let full_y = g.label_matrix().select_rows(none.nodes.iter());
        assert_eq!(none.y, full_y);

        let all = pseudo_label(&m, &g, PseudoLabelMode::All).unwrap();
        assert_eq!(all.n1(), 60);
        for r in 0..60 {
            assert_eq!(all.y.row(r).sum(), 1.0);
        }
        let correct = (0..60)
            .filter(|&i| all.y[(i, g.labels()[i].unwrap())] == 1.0)
            .count();
        assert!(correct as f64 / 60.0 >= 0.95);
    }

    #[test]
    fn normalize_rows_leaves_zero_rows() {
        let x = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 0.0]);
        let n = normalize_rows(&x);
        assert_eq!(n, DMatrix::from_row_slice(2, 2, &[0.6, 0.8, 0.0, 0.0]));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax([1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax([0.0, 0.0]), 0);
    }
}
