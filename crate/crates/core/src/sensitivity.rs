//! Sensitivity of the aggregate features to a single edge change.
//!
//! The closed-form bound is `Ψ(Z_m) = 2(1-α)/α · [1 - (1-α)^m]`, averaged
//! over the configured steps. The empirical side enumerates every
//! edge-level neighbor of a small graph and measures
//! `ψ(Z) = Σ_i ||z'_i - z_i||_2` directly.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, ChangeKind, EdgeChange, Topology, DEFAULT_CLIP};
use crate::propagation::{aggregate, PropagationConfig, Step};

/// Tolerance used when checking the bound against measured values.
pub const BOUND_TOLERANCE: f64 = 1e-7;

/// Largest graph the neighbor enumeration accepts by default.
pub const DEFAULT_AUDIT_MAX_NODES: usize = 30;

/// `Ψ(Z_m)` for a single propagation step.
pub fn sensitivity_bound_single(alpha: f64, step: Step) -> f64 {
    let keep = 1.0 - alpha;
    let scale = 2.0 * keep / alpha;
    match step {
        Step::Finite(m) => scale * (1.0 - keep.powi(m as i32)),
        Step::Infinite => scale,
    }
}

/// `Ψ(Z)`, the mean of the per-step bounds.
pub fn sensitivity_bound(cfg: &PropagationConfig) -> f64 {
    let total: f64 = cfg
        .steps
        .iter()
        .map(|&m| sensitivity_bound_single(cfg.alpha, m))
        .sum();
    total / cfg.steps.len() as f64
}

/// `ψ` between two aggregate matrices of equal shape.
pub fn psi(z: &DMatrix<f64>, z_prime: &DMatrix<f64>) -> f64 {
    assert_eq!(z.shape(), z_prime.shape());
    (0..z.nrows())
        .map(|i| (z_prime.row(i) - z.row(i)).norm())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub clip: f64,
    pub max_nodes: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            clip: DEFAULT_CLIP,
            max_nodes: DEFAULT_AUDIT_MAX_NODES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborPsi {
    pub change: EdgeChange,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub bound: f64,
    /// Largest `ψ` over all neighbors, additions included.
    pub empirical_max: f64,
    pub per_neighbor: Vec<NeighborPsi>,
    pub config: PropagationConfig,
}

impl SensitivityReport {
    fn max_of(&self, kind: ChangeKind) -> Option<f64> {
        self.per_neighbor
            .iter()
            .filter(|p| p.change.kind == kind)
            .map(|p| p.psi)
            .reduce(f64::max)
    }

    pub fn max_removal(&self) -> Option<f64> {
        self.max_of(ChangeKind::Remove)
    }

    pub fn max_addition(&self) -> Option<f64> {
        self.max_of(ChangeKind::Add)
    }

    /// Neighbors of the given kind whose `ψ` exceeds `bound + tol`.
    pub fn violations(&self, kind: ChangeKind, bound: f64, tol: f64) -> Vec<NeighborPsi> {
        self.per_neighbor
            .iter()
            .filter(|p| p.change.kind == kind && p.psi > bound + tol)
            .copied()
            .collect()
    }

    /// Smallest `bound - ψ` over removal neighbors.
    pub fn removal_slack(&self) -> Option<f64> {
        self.max_removal().map(|m| self.bound - m)
    }

    /// One tab-separated record per neighbor, against `bound`.
    pub fn to_tsv(&self, bound: f64) -> String {
        let mut out = String::from("u\tv\tdirection\tpsi\tbound\tslack\n");
        for p in &self.per_neighbor {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                p.change.u,
                p.change.v,
                p.change.kind.as_str(),
                p.psi,
                bound,
                bound - p.psi
            );
        }
        out
    }
}

/// Measures `ψ(Z)` for every edge-level neighbor of `topology`.
///
/// `x` must already be row-normalized.
pub fn empirical_sensitivity(
    topology: &Topology,
    x: &DMatrix<f64>,
    cfg: &PropagationConfig,
    opts: AuditOptions,
) -> Result<SensitivityReport> {
    let n = topology.node_count();
    if n > opts.max_nodes {
        return Err(Error::SizeGuard {
            what: "audit node count",
            actual: n,
            cap: opts.max_nodes,
        });
    }
    let base_adj = normalize_adjacency(topology, opts.clip)?;
    let base = aggregate(&base_adj, x, cfg)?.z;
    let per_neighbor = topology
        .neighboring_topologies()
        .into_par_iter()
        .map(|(change, t)| {
            let adj = normalize_adjacency(&t, opts.clip)?;
            let z = aggregate(&adj, x, cfg)?.z;
            Ok(NeighborPsi {
                change,
                psi: psi(&base, &z),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let empirical_max = per_neighbor.iter().map(|p| p.psi).fold(0.0, f64::max);
    Ok(SensitivityReport {
        bound: sensitivity_bound(cfg),
        empirical_max,
        per_neighbor,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_step_values() {
        assert_eq!(sensitivity_bound_single(0.5, Step::Infinite), 2.0);
        for alpha in [0.1, 0.5, 0.9] {
            assert_eq!(sensitivity_bound_single(alpha, Step::Finite(0)), 0.0);
        }
        assert_abs_diff_eq!(sensitivity_bound_single(0.5, Step::Finite(1)), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mean_over_steps() {
        let zeros = PropagationConfig::new(0.3, vec![Step::Finite(0); 3]);
        assert_eq!(sensitivity_bound(&zeros), 0.0);
        let mixed = PropagationConfig::new(0.5, vec![Step::Finite(1), Step::Infinite]);
        assert_abs_diff_eq!(sensitivity_bound(&mixed), 1.5, epsilon = 1e-15);
        let full_restart = PropagationConfig::new(1.0, vec![Step::Finite(4), Step::Infinite]);
        assert_eq!(sensitivity_bound(&full_restart), 0.0);
    }

    #[test]
    fn monotone_in_alpha_and_steps() {
        let alphas: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        for m in [Step::Finite(1), Step::Finite(3), Step::Finite(20), Step::Infinite] {
            for w in alphas.windows(2) {
                assert!(sensitivity_bound_single(w[1], m) <= sensitivity_bound_single(w[0], m));
            }
        }
        for &alpha in &alphas {
            let mut prev = 0.0;
            for m in 0..60 {
                let b = sensitivity_bound_single(alpha, Step::Finite(m));
                assert!(b >= prev);
                prev = b;
            }
            assert!(sensitivity_bound_single(alpha, Step::Infinite) >= prev);
        }
    }

    #[test]
    fn finite_bound_tends_to_limit() {
        for alpha in [0.2, 0.5, 0.8] {
            let lim = sensitivity_bound_single(alpha, Step::Infinite);
            let far = sensitivity_bound_single(alpha, Step::Finite(400));
            assert_abs_diff_eq!(far, lim, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_steps_give_zero_psi() {
        let t = Topology::new(4, [(0, 1), (1, 2)]).unwrap();
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.6, 0.8, 0.0, 0.0]);
        let cfg = PropagationConfig::new(0.5, vec![Step::Finite(0)]);
        let r = empirical_sensitivity(&t, &x, &cfg, AuditOptions::default()).unwrap();
        assert_eq!(r.per_neighbor.len(), 6);
        assert!(r.per_neighbor.iter().all(|p| p.psi == 0.0));
    }

    #[test]
    fn two_node_ppr_within_bound() {
        let t = Topology::new(2, [(0, 1)]).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let cfg = PropagationConfig::new(0.5, vec![Step::Infinite]);
        let r = empirical_sensitivity(&t, &x, &cfg, AuditOptions::default()).unwrap();
        assert_eq!(r.bound, 2.0);
        assert!(r.max_removal().unwrap() <= 2.0 + BOUND_TOLERANCE);
        assert!(r.violations(ChangeKind::Remove, r.bound, BOUND_TOLERANCE).is_empty());
    }

    #[test]
    fn size_guard_applies() {
        let t = Topology::empty(31).unwrap();
        let x = DMatrix::zeros(31, 1);
        let cfg = PropagationConfig::new(0.5, vec![Step::Finite(1)]);
        assert!(matches!(
            empirical_sensitivity(&t, &x, &cfg, AuditOptions::default()),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn tsv_has_one_record_per_neighbor() {
        let t = Topology::new(3, [(0, 1)]).unwrap();
        let x = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 0.5]);
        let cfg = PropagationConfig::new(0.5, vec![Step::Finite(2)]);
        let r = empirical_sensitivity(&t, &x, &cfg, AuditOptions::default()).unwrap();
        let tsv = r.to_tsv(r.bound);
        assert_eq!(tsv.lines().count(), 1 + 3);
        assert!(tsv.lines().nth(1).unwrap().starts_with("0\t1\tremove\t"));
    }
}
