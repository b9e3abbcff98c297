//! Personalized PageRank propagation.
//!
//! `R_0 = I`, finite `m` uses the truncated series
//! `α Σ_{i<m} (1-α)^i Ã^i + (1-α)^m Ã^m` (equivalently the recursion
//! `R_m = (1-α) Ã R_{m-1} + α I`), and `m = ∞` the limit `α (I - (1-α) Ã)^-1`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;

/// Largest graph the dense propagation path accepts by default.
pub const DEFAULT_MAX_NODES: usize = 20_000;

/// Number of propagation steps: a finite count or the PPR limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Step {
    Finite(u32),
    Infinite,
}

impl Step {
    pub fn is_zero(self) -> bool {
        self == Step::Finite(0)
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Finite(m) => write!(f, "{m}"),
            Step::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Step {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Step::Infinite),
            t => t
                .parse::<u32>()
                .map(Step::Finite)
                .map_err(|_| format!("invalid propagation step `{t}` (expected a non-negative integer or `inf`)")),
        }
    }
}

impl From<Step> for String {
    fn from(s: Step) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Step {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse()
    }
}

/// Parses a comma separated step list such as `1,2,inf`.
pub fn parse_steps(s: &str) -> std::result::Result<Vec<Step>, String> {
    s.split(',').map(str::parse).collect()
}

pub fn format_steps(steps: &[Step]) -> String {
    steps
        .iter()
        .map(Step::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    /// Restart probability, in `(0, 1]`.
    pub alpha: f64,
    /// Propagation steps `m_1..m_s`; repeats allowed.
    pub steps: Vec<Step>,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
}

fn default_max_nodes() -> usize {
    DEFAULT_MAX_NODES
}

impl PropagationConfig {
    pub fn new(alpha: f64, steps: Vec<Step>) -> Self {
        PropagationConfig {
            alpha,
            steps,
            max_nodes: DEFAULT_MAX_NODES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.steps.is_empty() {
            return Err(Error::param("steps", "at least one propagation step is required"));
        }
        Ok(())
    }

    /// Number of concatenated blocks `s`.
    pub fn blocks(&self) -> usize {
        self.steps.len()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::param("alpha", format!("must lie in (0, 1], got {alpha}")))
    }
}

fn check_size(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(Error::SizeGuard {
            what: "node count",
            actual: n,
            cap,
        });
    }
    Ok(())
}

/// Dense propagation matrix `R_m`.
pub fn build_propagation_matrix(
    adj: &NormalizedAdjacency,
    alpha: f64,
    step: Step,
) -> Result<DMatrix<f64>> {
    check_alpha(alpha)?;
    let n = adj.node_count();
    check_size(n, DEFAULT_MAX_NODES)?;
    propagate(adj, alpha, step, &DMatrix::identity(n, n))
}

/// `R_m · rhs`, computed without forming `R_m` for finite `m`.
fn propagate(
    adj: &NormalizedAdjacency,
    alpha: f64,
    step: Step,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    match step {
        Step::Finite(m) => {
            let keep = 1.0 - alpha;
            let mut acc = rhs.clone();
            for _ in 0..m {
                let mut next = adj.mul_dense(&acc);
                next *= keep;
                next += rhs * alpha;
                acc = next;
            }
            Ok(acc)
        }
        Step::Infinite => {
            let n = adj.node_count();
            let mut system = DMatrix::<f64>::identity(n, n);
            system -= adj.to_dense() * (1.0 - alpha);
            let lu = system.lu();
            let out = lu
                .solve(&(rhs * alpha))
                .ok_or_else(|| Error::Numerical("I - (1-α)Ã is singular".into()))?;
            if out.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(
                    "non-finite entries after the PPR solve".into(),
                ));
            }
            Ok(out)
        }
    }
}

/// Aggregate feature matrix `Z = (1/s)(R_{m_1} X ⊕ … ⊕ R_{m_s} X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateFeatures {
    pub z: DMatrix<f64>,
    pub config: PropagationConfig,
    /// Width of each block (columns of the input `X`).
    pub d1: usize,
}

impl AggregateFeatures {
    /// Total width `s · d1`.
    pub fn width(&self) -> usize {
        self.z.ncols()
    }
}

/// Propagates `x` with every configured step and concatenates the blocks,
/// scaled by `1/s`. Rows of `x` must have L2 norm at most 1.
pub fn aggregate(
    adj: &NormalizedAdjacency,
    x: &DMatrix<f64>,
    cfg: &PropagationConfig,
) -> Result<AggregateFeatures> {
    cfg.validate()?;
    let n = adj.node_count();
    if x.nrows() != n {
        return Err(Error::Dimension(format!(
            "feature matrix has {} rows, adjacency has {n}",
            x.nrows()
        )));
    }
    check_size(n, cfg.max_nodes)?;
    if let Some(i) = (0..n).find(|&i| x.row(i).norm() > 1.0 + 1e-9) {
        return Err(Error::param(
            "features",
            format!("row {i} has L2 norm {} > 1", x.row(i).norm()),
        ));
    }
    let d1 = x.ncols();
    let s = cfg.blocks();
    let mut cache: HashMap<Step, DMatrix<f64>> = HashMap::new();
    let mut z = DMatrix::zeros(n, s * d1);
    for (b, &step) in cfg.steps.iter().enumerate() {
        if !cache.contains_key(&step) {
            let block = propagate(adj, cfg.alpha, step, x)?;
            cache.insert(step, block);
        }
        let block = &cache[&step];
        z.view_mut((0, b * d1), (n, d1))
            .copy_from(&(block / s as f64));
    }
    Ok(AggregateFeatures {
        z,
        config: cfg.clone(),
        d1,
    })
}

/// Frobenius distance between the APPR matrix `R_m` and the PPR limit.
pub fn ppr_convergence_gap(adj: &NormalizedAdjacency, alpha: f64, m: u32) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    let finite = build_propagation_matrix(adj, alpha, Step::Finite(m))?;
    let limit = build_propagation_matrix(adj, alpha, Step::Infinite)?;
    Ok((finite - limit).norm())
}

/// Tab-separated dump of a matrix, one row per line.
pub fn matrix_to_tsv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, Topology};
    use approx::assert_abs_diff_eq;

    fn path2() -> NormalizedAdjacency {
        normalize_adjacency(&Topology::new(2, [(0, 1)]).unwrap(), 0.5).unwrap()
    }

    fn triangle() -> NormalizedAdjacency {
        normalize_adjacency(&Topology::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap(), 0.5).unwrap()
    }

    /// Straight transcription of the truncated series, powering Ã explicitly.
    fn closed_form(adj: &NormalizedAdjacency, alpha: f64, m: u32) -> DMatrix<f64> {
        let a = adj.to_dense();
        let n = a.nrows();
        let mut power = DMatrix::<f64>::identity(n, n);
        let mut sum = DMatrix::<f64>::zeros(n, n);
        for i in 0..m {
            sum += &power * (alpha * (1.0 - alpha).powi(i as i32));
            power = &power * &a;
        }
        sum + power * (1.0 - alpha).powi(m as i32)
    }

    #[test]
    fn zero_steps_is_identity() {
        for alpha in [0.1, 0.5, 1.0] {
            let r = build_propagation_matrix(&triangle(), alpha, Step::Finite(0)).unwrap();
            assert_eq!(r, DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn full_restart_is_identity() {
        for m in [1, 3, 7] {
            let r = build_propagation_matrix(&triangle(), 1.0, Step::Finite(m)).unwrap();
            assert_eq!(r, DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn two_node_path_one_step() {
        let r = build_propagation_matrix(&path2(), 0.5, Step::Finite(1)).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        assert_abs_diff_eq!(r, want, epsilon = 1e-15);
    }

    #[test]
    fn recursion_matches_closed_form() {
        let t = Topology::new(6, [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (1, 4)]).unwrap();
        let adj = normalize_adjacency(&t, 0.5).unwrap();
        for alpha in [0.2, 0.5, 0.8] {
            for m in [1, 2, 5, 10] {
                let r = build_propagation_matrix(&adj, alpha, Step::Finite(m)).unwrap();
                assert!((r - closed_form(&adj, alpha, m)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn aggregate_identity_and_duplicate_steps() {
        let x = DMatrix::from_row_slice(2, 2, &[0.6, 0.8, 1.0, 0.0]);
        let z = aggregate(&path2(), &x, &PropagationConfig::new(0.3, vec![Step::Finite(0)])).unwrap();
        assert_eq!(z.z, x);

        let cfg = PropagationConfig::new(0.3, vec![Step::Finite(0), Step::Finite(0)]);
        let z = aggregate(&path2(), &x, &cfg).unwrap();
        assert_eq!(z.width(), 4);
        for i in 0..2 {
            assert_abs_diff_eq!(
                z.z.row(i).norm(),
                0.5 * 2f64.sqrt() * x.row(i).norm(),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn aggregate_path_example() {
        let x = DMatrix::identity(2, 2);
        let z = aggregate(&path2(), &x, &PropagationConfig::new(0.5, vec![Step::Finite(1)])).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        assert_abs_diff_eq!(z.z, want, epsilon = 1e-15);
    }

    #[test]
    fn aggregate_matches_explicit_matrices() {
        let t = Topology::new(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]).unwrap();
        let adj = normalize_adjacency(&t, 0.5).unwrap();
        let x = DMatrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin() / 2.0);
        let steps = vec![Step::Finite(2), Step::Infinite, Step::Finite(2)];
        let cfg = PropagationConfig::new(0.4, steps.clone());
        let z = aggregate(&adj, &x, &cfg).unwrap();
        for (b, &step) in steps.iter().enumerate() {
            let r = build_propagation_matrix(&adj, 0.4, step).unwrap();
            let want = r * &x / 3.0;
            let got = z.z.view((0, b * 3), (5, 3)).clone_owned();
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn aggregate_rejects_mismatch_and_unnormalized_rows() {
        let cfg = PropagationConfig::new(0.5, vec![Step::Finite(1)]);
        assert!(matches!(
            aggregate(&path2(), &DMatrix::zeros(3, 2), &cfg),
            Err(Error::Dimension(_))
        ));
        let big = DMatrix::from_element(2, 2, 1.0);
        assert!(aggregate(&path2(), &big, &cfg).is_err());
    }

    #[test]
    fn size_guard() {
        let mut cfg = PropagationConfig::new(0.5, vec![Step::Finite(1)]);
        cfg.max_nodes = 1;
        assert!(matches!(
            aggregate(&path2(), &DMatrix::zeros(2, 1), &cfg),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn convergence_gap_examples() {
        let single = normalize_adjacency(&Topology::empty(1).unwrap(), 0.5).unwrap();
        assert_eq!(ppr_convergence_gap(&single, 0.5, 0).unwrap(), 0.0);

        assert!(ppr_convergence_gap(&triangle(), 0.5, 50).unwrap() < 1e-12);

        let path = normalize_adjacency(&Topology::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap(), 0.5).unwrap();
        let gaps: Vec<f64> = (1..6).map(|m| ppr_convergence_gap(&path, 0.2, m).unwrap()).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");

        assert!(ppr_convergence_gap(&triangle(), 1.0, 3).is_err());
    }

    #[test]
    fn step_parsing() {
        assert_eq!(
            parse_steps("0,2,inf").unwrap(),
            vec![Step::Finite(0), Step::Finite(2), Step::Infinite]
        );
        assert!(parse_steps("1,-2").is_err());
        assert_eq!(format_steps(&[Step::Finite(5), Step::Infinite]), "5,inf");
    }

    #[test]
    fn config_validation() {
        assert!(PropagationConfig::new(0.0, vec![Step::Infinite]).validate().is_err());
        assert!(PropagationConfig::new(1.5, vec![Step::Finite(1)]).validate().is_err());
        assert!(PropagationConfig::new(0.5, vec![]).validate().is_err());
    }
}
