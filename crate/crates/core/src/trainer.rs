//! End-to-end private training: encode, normalize, propagate, calibrate,
//! sample noise, and minimize the perturbed objective.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::artifact::{ModelArtifact, OptimizerSummary, SamplerInfo, FORMAT_VERSION};
use crate::calibration::{calibrate, CalibrationResult, PrivacyBudget, DEFAULT_XI};
use crate::encoder::{encode, fit_encoder, normalize_rows, pseudo_label, EncoderConfig, EncoderModel, PseudoLabelMode};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph, DEFAULT_CLIP};
use crate::noise::{sample_noise_matrix, NORMAL_METHOD, RADIUS_METHOD, RNG_ALGORITHM};
use crate::objective::{LossKind, LossSpec, ObjectiveContext};
use crate::propagation::{aggregate, PropagationConfig, Step};
use crate::sensitivity::sensitivity_bound;

/// Child stream of the run seed used for the noise matrix.
pub const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    /// Stop once `||∇L||_F` is at most this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo_c: f64,
    pub initial_step: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iters: 50_000,
            grad_tol: 1e-8,
            armijo_c: 1e-4,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub budget: PrivacyBudget,
    pub loss: LossKind,
    /// Pseudo-Huber width `δ_l`; ignored by the soft-margin loss.
    pub delta_l: f64,
    pub propagation: PropagationConfig,
    pub clip: f64,
    pub lambda: f64,
    pub xi: f64,
    pub encoder: EncoderConfig,
    pub pseudo_label: PseudoLabelMode,
    pub optimizer: OptimizerSettings,
    /// Seed for the noise stream.
    pub seed: u64,
    /// Seed for encoder initialization; falls back to `seed`.
    pub encoder_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            budget: PrivacyBudget::new(4.0, 1e-4),
            loss: LossKind::MultilabelSoftMargin,
            delta_l: 0.2,
            propagation: PropagationConfig::new(0.4, vec![Step::Finite(2)]),
            clip: DEFAULT_CLIP,
            lambda: 0.2,
            xi: DEFAULT_XI,
            encoder: EncoderConfig::default(),
            pseudo_label: PseudoLabelMode::None,
            optimizer: OptimizerSettings::default(),
            seed: 0,
            encoder_seed: None,
        }
    }
}

impl TrainConfig {
    pub fn loss_spec(&self, classes: usize) -> LossSpec {
        match self.loss {
            LossKind::MultilabelSoftMargin => LossSpec::mlsm(classes),
            LossKind::PseudoHuber => LossSpec::pseudo_huber(classes, self.delta_l),
        }
    }

    pub fn resolved_encoder_seed(&self) -> u64 {
        self.encoder_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        self.propagation.validate()?;
        self.encoder.validate()?;
        self.loss_spec(2).validate()?;
        if !(self.clip > 0.0 && self.clip <= 0.5) {
            return Err(Error::param("clip", format!("must lie in (0, 1/2], got {}", self.clip)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", format!("must be positive, got {}", self.lambda)));
        }
        if !(self.xi > 0.0) {
            return Err(Error::param("xi", format!("must be positive, got {}", self.xi)));
        }
        if !(self.optimizer.grad_tol > 0.0) || self.optimizer.max_iters == 0 {
            return Err(Error::param("grad_tol", "optimizer needs grad_tol > 0 and max_iters > 0"));
        }
        Ok(())
    }
}

/// Objective values visited by the optimizer, starting at the initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerTrace {
    pub values: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub iterations: usize,
}

impl OptimizerTrace {
    pub fn final_grad_norm(&self) -> f64 {
        *self.grad_norms.last().expect("trace has the initial point")
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("trace has the initial point")
    }
}

/// Relative slack below which two objective values are treated as equal.
pub const VALUE_SLACK: f64 = 1e-12;

/// Full-batch gradient descent with Armijo backtracking.
///
/// A step is accepted when it passes the sufficient-decrease test. Once the
/// decrease has sunk below rounding noise, a step no longer than `1/L` (with
/// `L` the smoothness bound) is also accepted when the objective does not
/// rise by more than `VALUE_SLACK · (1 + |f|)` and the gradient norm shrinks.
pub fn minimize_objective(
    ctx: &ObjectiveContext,
    init: DMatrix<f64>,
    settings: &OptimizerSettings,
) -> Result<(DMatrix<f64>, OptimizerTrace)> {
    if !(ctx.strong_convexity() > 0.0) {
        return Err(Error::param("lambda", "objective is not strongly convex"));
    }
    let mut theta = init;
    let (mut f, mut g) = ctx.value_and_gradient(&theta)?;
    let mut gnorm = g.norm();
    let mut trace = OptimizerTrace {
        values: vec![f],
        grad_norms: vec![gnorm],
        iterations: 0,
    };
    let safe_step = 1.0 / ctx.smoothness_bound();
    let mut step = settings.initial_step;
    while gnorm > settings.grad_tol {
        if trace.iterations >= settings.max_iters {
            return Err(Error::Convergence {
                iterations: trace.iterations,
                grad_norm: gnorm,
                tol: settings.grad_tol,
            });
        }
        loop {
            let candidate = &theta - &g * step;
            let (fc, gc) = ctx.value_and_gradient(&candidate)?;
            let gcnorm = gc.norm();
            let armijo = fc <= f - settings.armijo_c * step * gnorm * gnorm;
            let flat = step <= safe_step && fc <= f + VALUE_SLACK * (1.0 + f.abs()) && gcnorm < gnorm;
            if fc.is_finite() && (armijo || flat) {
                theta = candidate;
                f = fc;
                g = gc;
                gnorm = gcnorm;
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                return Err(Error::Numerical(format!(
                    "line search collapsed at gradient norm {gnorm:e}"
                )));
            }
        }
        trace.iterations += 1;
        trace.values.push(f);
        trace.grad_norms.push(gnorm);
    }
    Ok((theta, trace))
}

/// Public preprocessing shared by private and non-private fits.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub encoder: EncoderModel,
    /// Aggregate features for every node, `n × s·d1`.
    pub z: DMatrix<f64>,
    /// Training rows of `z`.
    pub z_train: DMatrix<f64>,
    pub y_train: DMatrix<f64>,
    pub train_nodes: Vec<usize>,
    pub loss: LossSpec,
}

pub fn prepare(g: &Graph, cfg: &TrainConfig) -> Result<Prepared> {
    cfg.validate()?;
    let loss = cfg.loss_spec(g.num_classes());
    loss.validate()?;
    let mut enc_cfg = cfg.encoder.clone();
    enc_cfg.seed = cfg.resolved_encoder_seed();
    let encoder = fit_encoder(g, &enc_cfg)?;
    let x = normalize_rows(&encode(&encoder, g.features())?);
    let adj = normalize_adjacency(g.topology(), cfg.clip)?;
    let z = aggregate(&adj, &x, &cfg.propagation)?.z;
    let targets = pseudo_label(&encoder, g, cfg.pseudo_label)?;
    let z_train = z.select_rows(targets.nodes.iter());
    Ok(Prepared {
        encoder,
        z,
        z_train,
        y_train: targets.y,
        train_nodes: targets.nodes,
        loss,
    })
}

/// Largest column-wise L2 gap between `expected` and `actual`.
pub fn column_gap(expected: &DMatrix<f64>, actual: &DMatrix<f64>) -> f64 {
    (0..expected.ncols())
        .map(|j| (expected.column(j) - actual.column(j)).norm())
        .fold(0.0, f64::max)
}

/// Trains a private model and returns the releasable artifact.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<ModelArtifact> {
    let prep = prepare(g, cfg)?;
    let n1 = prep.train_nodes.len();
    let d = prep.z.ncols();
    let c = g.num_classes();
    let cal = calibrate(cfg.budget, &prep.loss, &cfg.propagation, n1, d, cfg.lambda, cfg.xi)?;
    debug_assert_eq!(cal.psi_z, sensitivity_bound(&cfg.propagation));
    debug_assert_eq!(cal.d, cfg.propagation.blocks() * cfg.encoder.d1);

    let noise = sample_noise_matrix(d, c, cal.beta, cfg.seed, NOISE_STREAM);
    let ctx = ObjectiveContext::new(
        prep.z_train,
        prep.y_train,
        cal.lambda_eff,
        cal.lambda_prime,
        noise.b.clone(),
        prep.loss,
    )?;
    let (theta, trace) = minimize_objective(&ctx, DMatrix::zeros(d, c), &cfg.optimizer)?;

    let residual = column_gap(&noise.b, &ctx.implied_noise(&theta)?);
    if residual > 1e-4 * (1.0 + noise.b.norm()) {
        return Err(Error::Numerical(format!(
            "stationarity check failed: implied noise differs by {residual:e}"
        )));
    }

    Ok(ModelArtifact {
        format_version: FORMAT_VERSION,
        theta,
        encoder: prep.encoder,
        calibration: cal,
        propagation: cfg.propagation.clone(),
        clip: cfg.clip,
        loss: prep.loss,
        pseudo_label: cfg.pseudo_label,
        n1,
        seed: cfg.seed,
        encoder_seed: cfg.resolved_encoder_seed(),
        noise,
        sampler: SamplerInfo {
            rng: RNG_ALGORITHM.into(),
            normal: NORMAL_METHOD.into(),
            radius: RADIUS_METHOD.into(),
        },
        optimizer: OptimizerSummary {
            iterations: trace.iterations,
            final_grad_norm: trace.final_grad_norm(),
            final_value: trace.final_value(),
            grad_tol: cfg.optimizer.grad_tol,
            max_iters: cfg.optimizer.max_iters,
        },
        stationarity_residual: residual,
    })
}

/// Minimizer of the unperturbed regularized loss `L_Λ` on the same
/// preprocessed features, with `Λ` raised to `ξ` if smaller.
pub fn fit_non_private(g: &Graph, cfg: &TrainConfig) -> Result<DMatrix<f64>> {
    let prep = prepare(g, cfg)?;
    let (d, c) = (prep.z.ncols(), g.num_classes());
    let ctx = ObjectiveContext::unperturbed(prep.z_train, prep.y_train, cfg.lambda.max(cfg.xi), prep.loss)?;
    Ok(minimize_objective(&ctx, DMatrix::zeros(d, c), &cfg.optimizer)?.0)
}

/// Recomputes the stationarity gap of a stored artifact on its training graph.
pub fn recheck_stationarity(artifact: &ModelArtifact, g: &Graph, cfg: &TrainConfig) -> Result<f64> {
    let prep = prepare(g, cfg)?;
    let cal: &CalibrationResult = &artifact.calibration;
    let ctx = ObjectiveContext::new(
        prep.z_train,
        prep.y_train,
        cal.lambda_eff,
        cal.lambda_prime,
        artifact.noise.b.clone(),
        prep.loss,
    )?;
    Ok(column_gap(&artifact.noise.b, &ctx.implied_noise(&artifact.theta)?))
}
