//! Base losses and the perturbed training objective.
//!
//! With scores `s_ij = z_i^T θ_j`,
//!
//! ```text
//! L_priv(Θ) = (1/n1) Σ_i Σ_j ℓ(s_ij; y_ij) + (Λ/2)||Θ||² + (1/n1) <B, Θ> + (Λ'/2)||Θ||²
//! ```
//!
//! Both losses are convex in the score with bounded first three
//! derivatives, which is what the calibration step relies on.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Per-class logistic loss averaged over classes.
    MultilabelSoftMargin,
    PseudoHuber,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::MultilabelSoftMargin => "mlsm",
            LossKind::PseudoHuber => "pseudo-huber",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mlsm" | "multilabel-soft-margin" => Ok(LossKind::MultilabelSoftMargin),
            "pseudo-huber" | "pseudo_huber" => Ok(LossKind::PseudoHuber),
            other => Err(format!("unknown loss `{other}` (expected mlsm or pseudo-huber)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Number of classes `c`.
    pub classes: usize,
    /// Pseudo-Huber width; ignored by the soft-margin loss.
    pub delta_l: f64,
}

impl LossSpec {
    pub fn mlsm(classes: usize) -> Self {
        LossSpec {
            kind: LossKind::MultilabelSoftMargin,
            classes,
            delta_l: 1.0,
        }
    }

    pub fn pseudo_huber(classes: usize, delta_l: f64) -> Self {
        LossSpec {
            kind: LossKind::PseudoHuber,
            classes,
            delta_l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::param("classes", "need at least one output column"));
        }
        if self.kind == LossKind::PseudoHuber && !(self.delta_l > 0.0 && self.delta_l.is_finite()) {
            return Err(Error::param("delta_l", format!("must be positive, got {}", self.delta_l)));
        }
        Ok(())
    }

    /// `ℓ(x; y)` and its first three derivatives in `x`.
    pub fn eval(&self, x: f64, y: f64) -> LossDerivs {
        let c = self.classes as f64;
        match self.kind {
            LossKind::MultilabelSoftMargin => {
                let s = sigmoid(x);
                let t = sigmoid(-x);
                LossDerivs {
                    value: (softplus(x) - y * x) / c,
                    d1: (s - y) / c,
                    d2: s * t / c,
                    d3: s * t * (t - s) / c,
                }
            }
            LossKind::PseudoHuber => {
                let dl = self.delta_l;
                let r = x - y;
                let q = (1.0 + (r / dl) * (r / dl)).sqrt();
                LossDerivs {
                    // δ²(q - 1) rewritten to avoid cancellation near r = 0
                    value: r * r / (q + 1.0) / c,
                    d1: r / (c * q),
                    d2: 1.0 / (c * q * q * q),
                    d3: -3.0 * r / (c * dl * dl * q.powi(5)),
                }
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDerivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// Checked evaluation of the base loss: `y` must be exactly 0 or 1.
pub fn loss_value_and_derivs(spec: &LossSpec, x: f64, y: f64) -> Result<LossDerivs> {
    spec.validate()?;
    if !x.is_finite() {
        return Err(Error::param("x", format!("must be finite, got {x}")));
    }
    if y != 0.0 && y != 1.0 {
        return Err(Error::param("y", format!("labels must be 0 or 1, got {y}")));
    }
    Ok(spec.eval(x, y))
}

/// Suprema of `|ℓ'|`, `|ℓ''|`, `|ℓ'''|` over the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeSuprema {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

pub fn derivative_suprema(spec: &LossSpec) -> DerivativeSuprema {
    let c = spec.classes as f64;
    match spec.kind {
        LossKind::MultilabelSoftMargin => DerivativeSuprema {
            c1: 1.0 / c,
            c2: 1.0 / (4.0 * c),
            c3: 1.0 / (6.0 * 3f64.sqrt() * c),
        },
        LossKind::PseudoHuber => DerivativeSuprema {
            c1: spec.delta_l / c,
            c2: 1.0 / c,
            c3: 48.0 * 5f64.sqrt() / (125.0 * c * spec.delta_l),
        },
    }
}

/// Everything needed to evaluate the perturbed objective on the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveContext {
    /// Training rows of the aggregate features, `n1 × d`.
    pub z: DMatrix<f64>,
    /// Binary targets, `n1 × c`.
    pub y: DMatrix<f64>,
    pub lambda: f64,
    pub lambda_prime: f64,
    /// Linear noise term, `d × c`.
    pub b: DMatrix<f64>,
    pub loss: LossSpec,
    /// Multiplier on the data term; 1 for training, 0 isolates the quadratic part.
    pub loss_weight: f64,
}

impl ObjectiveContext {
    pub fn new(
        z: DMatrix<f64>,
        y: DMatrix<f64>,
        lambda: f64,
        lambda_prime: f64,
        b: DMatrix<f64>,
        loss: LossSpec,
    ) -> Result<Self> {
        loss.validate()?;
        if z.nrows() == 0 {
            return Err(Error::param("z", "objective needs at least one training row"));
        }
        if y.nrows() != z.nrows() || y.ncols() != loss.classes {
            return Err(Error::Dimension(format!(
                "labels are {}x{}, expected {}x{}",
                y.nrows(),
                y.ncols(),
                z.nrows(),
                loss.classes
            )));
        }
        if b.shape() != (z.ncols(), loss.classes) {
            return Err(Error::Dimension(format!(
                "noise matrix is {}x{}, expected {}x{}",
                b.nrows(),
                b.ncols(),
                z.ncols(),
                loss.classes
            )));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::param("y", "labels must be 0 or 1"));
        }
        if !(lambda > 0.0) || !(lambda_prime >= 0.0) {
            return Err(Error::param(
                "lambda",
                format!("need Λ > 0 and Λ' >= 0, got {lambda} and {lambda_prime}"),
            ));
        }
        Ok(ObjectiveContext {
            z,
            y,
            lambda,
            lambda_prime,
            b,
            loss,
            loss_weight: 1.0,
        })
    }

    /// Unperturbed objective: no noise term and no extra quadratic.
    pub fn unperturbed(z: DMatrix<f64>, y: DMatrix<f64>, lambda: f64, loss: LossSpec) -> Result<Self> {
        let b = DMatrix::zeros(z.ncols(), loss.classes);
        Self::new(z, y, lambda, 0.0, b, loss)
    }

    pub fn n1(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn classes(&self) -> usize {
        self.loss.classes
    }

    /// Strong-convexity modulus `Λ + Λ'`.
    pub fn strong_convexity(&self) -> f64 {
        self.lambda + self.lambda_prime
    }

    /// Upper bound on the Lipschitz constant of the gradient:
    /// `c2 ||Z||_F² / n1 + Λ + Λ'`.
    pub fn smoothness_bound(&self) -> f64 {
        let c2 = derivative_suprema(&self.loss).c2;
        self.loss_weight * c2 * self.z.norm_squared() / self.n1() as f64 + self.strong_convexity()
    }

    fn check_theta(&self, theta: &DMatrix<f64>) -> Result<()> {
        if theta.shape() != (self.dim(), self.classes()) {
            return Err(Error::Dimension(format!(
                "Θ is {}x{}, expected {}x{}",
                theta.nrows(),
                theta.ncols(),
                self.dim(),
                self.classes()
            )));
        }
        Ok(())
    }

    /// Mean data loss and the matrix of `ℓ'` at every score.
    fn data_term(&self, theta: &DMatrix<f64>, with_grad: bool) -> (f64, Option<DMatrix<f64>>) {
        let scores = &self.z * theta;
        let mut total = 0.0;
        let mut d1 = with_grad.then(|| DMatrix::zeros(scores.nrows(), scores.ncols()));
        for j in 0..scores.ncols() {
            for i in 0..scores.nrows() {
                let l = self.loss.eval(scores[(i, j)], self.y[(i, j)]);
                total += l.value;
                if let Some(d) = d1.as_mut() {
                    d[(i, j)] = l.d1;
                }
            }
        }
        (total / self.n1() as f64, d1)
    }

    /// Value and gradient of the full perturbed objective.
    pub fn value_and_gradient(&self, theta: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        self.check_theta(theta)?;
        let n1 = self.n1() as f64;
        let (data, d1) = self.data_term(theta, true);
        let d1 = d1.expect("requested");
        let reg = self.strong_convexity();
        let value = self.loss_weight * data
            + 0.5 * reg * theta.norm_squared()
            + self.b.dot(theta) / n1;
        let mut grad = self.z.tr_mul(&d1) * (self.loss_weight / n1);
        grad += theta * reg;
        grad += &self.b / n1;
        Ok((value, grad))
    }

    pub fn value(&self, theta: &DMatrix<f64>) -> Result<f64> {
        self.check_theta(theta)?;
        let (data, _) = self.data_term(theta, false);
        Ok(self.loss_weight * data
            + 0.5 * self.strong_convexity() * theta.norm_squared()
            + self.b.dot(theta) / self.n1() as f64)
    }

    /// Regularized loss `L_Λ` alone, ignoring `B` and `Λ'`.
    pub fn regularized_loss(&self, theta: &DMatrix<f64>) -> Result<f64> {
        self.check_theta(theta)?;
        let (data, _) = self.data_term(theta, false);
        Ok(self.loss_weight * data + 0.5 * self.lambda * theta.norm_squared())
    }

    /// Noise matrix implied by stationarity at `theta`:
    /// `B = -n1 ∂(L_Λ + (Λ'/2)||Θ||²)/∂Θ`.
    pub fn implied_noise(&self, theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let n1 = self.n1() as f64;
        let (_, d1) = self.data_term(theta, true);
        let mut grad = self.z.tr_mul(&d1.expect("requested")) * (self.loss_weight / n1);
        grad += theta * self.strong_convexity();
        Ok(grad * -n1)
    }
}

pub fn objective_value(ctx: &ObjectiveContext, theta: &DMatrix<f64>) -> Result<f64> {
    ctx.value(theta)
}

pub fn objective_gradient(ctx: &ObjectiveContext, theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ctx.value_and_gradient(theta).map(|(_, g)| g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityReport {
    pub trials: usize,
    /// Largest amount by which the strong-convexity inequality failed (0 if never).
    pub max_violation: f64,
    /// Trials failing by more than `1e-9`.
    pub violations: usize,
    pub min_margin: f64,
    pub mean_margin: f64,
}

/// Random probes of
/// `f(tA + (1-t)B) <= t f(A) + (1-t) f(B) - (Λ+Λ')/2 · t(1-t) ||A - B||²`.
///
/// The margin is the right side minus the left; it is never negative for a
/// correctly strongly convex objective.
pub fn convexity_probe<R: Rng + ?Sized>(
    ctx: &ObjectiveContext,
    trials: usize,
    scale: f64,
    rng: &mut R,
) -> Result<ConvexityReport> {
    if !(ctx.strong_convexity() > 0.0) {
        return Err(Error::param("lambda", "Λ + Λ' must be positive"));
    }
    let (d, c) = (ctx.dim(), ctx.classes());
    let mu = ctx.strong_convexity();
    let mut max_violation = 0.0f64;
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    let mut sum_margin = 0.0;
    for _ in 0..trials {
        let a = DMatrix::from_fn(d, c, |_, _| rng.random_range(-scale..scale));
        let b = DMatrix::from_fn(d, c, |_, _| rng.random_range(-scale..scale));
        let t: f64 = rng.random_range(1e-3..1.0 - 1e-3);
        let mid = &a * t + &b * (1.0 - t);
        let lhs = ctx.value(&mid)?;
        let rhs = t * ctx.value(&a)? + (1.0 - t) * ctx.value(&b)?
            - 0.5 * mu * t * (1.0 - t) * (&a - &b).norm_squared();
        let margin = rhs - lhs;
        min_margin = min_margin.min(margin);
        sum_margin += margin;
        if margin < 0.0 {
            max_violation = max_violation.max(-margin);
            if -margin > 1e-9 {
                violations += 1;
            }
        }
    }
    Ok(ConvexityReport {
        trials,
        max_violation,
        violations,
        min_margin,
        mean_margin: sum_margin / trials.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pseudo_huber_vanishes_at_target() {
        let spec = LossSpec::pseudo_huber(3, 0.5);
        for y in [0.0, 1.0] {
            let l = loss_value_and_derivs(&spec, y, y).unwrap();
            assert_eq!(l.value, 0.0);
            assert_eq!(l.d1, 0.0);
        }
    }

    #[test]
    fn mlsm_at_zero() {
        for c in [2, 4, 7] {
            let spec = LossSpec::mlsm(c);
            for y in [0.0, 1.0] {
                let l = loss_value_and_derivs(&spec, 0.0, y).unwrap();
                assert_relative_eq!(l.value, std::f64::consts::LN_2 / c as f64, max_relative = 1e-15);
            }
            let l = loss_value_and_derivs(&spec, 0.0, 1.0).unwrap();
            assert_relative_eq!(l.d1, -1.0 / (2.0 * c as f64), max_relative = 1e-15);
        }
    }

    /// Direct transcription of the textbook forms, valid for moderate |x|.
    fn mlsm_reference(x: f64, y: f64, c: f64) -> [f64; 4] {
        let e = x.exp();
        let value = -(y * (1.0 / (1.0 + (-x).exp())).ln()
            + (1.0 - y) * ((-x).exp() / (1.0 + (-x).exp())).ln())
            / c;
        let d1 = -(y / (1.0 + e) + (1.0 - y) * (-e / (1.0 + e))) / c;
        let d2 = -(y * (-e / (1.0 + e).powi(2)) + (1.0 - y) * (-e / (1.0 + e).powi(2))) / c;
        let d3 = -(y * e * (e - 1.0) / (1.0 + e).powi(3)
            + (1.0 - y) * e * (e - 1.0) / (1.0 + e).powi(3))
            / c;
        [value, d1, d2, d3]
    }

    #[test]
    fn mlsm_matches_reference_forms() {
        let spec = LossSpec::mlsm(3);
        for i in -200..=200 {
            let x = i as f64 * 0.1;
            for y in [0.0, 1.0] {
                let l = spec.eval(x, y);
                let r = mlsm_reference(x, y, 3.0);
                assert_abs_diff_eq!(l.value, r[0], epsilon = 1e-12);
                assert_abs_diff_eq!(l.d1, r[1], epsilon = 1e-12);
                assert_abs_diff_eq!(l.d2, r[2], epsilon = 1e-12);
                assert_abs_diff_eq!(l.d3, r[3], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn stable_at_extreme_scores() {
        for spec in [LossSpec::mlsm(2), LossSpec::pseudo_huber(2, 0.2)] {
            for x in [-500.0, -50.0, 50.0, 500.0] {
                for y in [0.0, 1.0] {
                    let l = spec.eval(x, y);
                    assert!(l.value.is_finite() && l.d1.is_finite());
                    assert!(l.d2.is_finite() && l.d3.is_finite());
                    assert!(l.value >= 0.0);
                }
            }
        }
        let l = LossSpec::mlsm(2).eval(500.0, 0.0);
        assert_relative_eq!(l.value, 250.0, max_relative = 1e-12);
    }

    #[test]
    fn rejects_soft_labels_and_non_finite_scores() {
        let spec = LossSpec::mlsm(2);
        assert!(loss_value_and_derivs(&spec, 0.0, 0.5).is_err());
        assert!(loss_value_and_derivs(&spec, f64::NAN, 1.0).is_err());
        assert!(LossSpec::pseudo_huber(2, 0.0).validate().is_err());
        assert!(LossSpec::mlsm(0).validate().is_err());
        assert!(LossSpec::mlsm(1).validate().is_ok());
    }

    #[test]
    fn suprema_examples() {
        let s = derivative_suprema(&LossSpec::mlsm(4));
        assert_relative_eq!(s.c1, 0.25);
        assert_relative_eq!(s.c2, 0.0625);
        assert_relative_eq!(s.c3, 1.0 / (24.0 * 3f64.sqrt()), max_relative = 1e-15);

        let s = derivative_suprema(&LossSpec::pseudo_huber(2, 0.5));
        assert_relative_eq!(s.c1, 0.25);
        assert_relative_eq!(s.c2, 0.5);
        assert_relative_eq!(s.c3, 48.0 * 5f64.sqrt() / 125.0, max_relative = 1e-15);
    }

    #[test]
    fn second_derivative_positive_and_third_matches_differences() {
        let h = 1e-4;
        for spec in [LossSpec::mlsm(3), LossSpec::pseudo_huber(3, 0.5)] {
            for i in -300..=300 {
                let x = i as f64 * 0.05 + 0.013;
                for y in [0.0, 1.0] {
                    let l = spec.eval(x, y);
                    assert!(l.d2 > 0.0);
                    let fd = (spec.eval(x + h, y).d2 - spec.eval(x - h, y).d2) / (2.0 * h);
                    let scale = l.d3.abs().max(1e-6);
                    assert!((fd - l.d3).abs() / scale < 1e-4, "x={x} y={y} fd={fd} d3={}", l.d3);
                }
            }
        }
    }

    fn small_ctx(loss: LossSpec) -> ObjectiveContext {
        let z = DMatrix::from_row_slice(3, 2, &[0.6, 0.8, -1.0, 0.0, 0.3, -0.4]);
        let mut y = DMatrix::zeros(3, loss.classes);
        y[(0, 0)] = 1.0;
        y[(1, 1)] = 1.0;
        y[(2, 0)] = 1.0;
        let b = DMatrix::from_fn(2, loss.classes, |i, j| (i as f64 - j as f64) * 0.7);
        ObjectiveContext::new(z, y, 0.2, 0.1, b, loss).unwrap()
    }

    #[test]
    fn zero_theta_values() {
        let loss = LossSpec::pseudo_huber(2, 0.5);
        let ctx = ObjectiveContext::unperturbed(DMatrix::from_element(3, 2, 0.5), DMatrix::zeros(3, 2), 1.0, loss)
            .unwrap();
        let zero = DMatrix::zeros(2, 2);
        assert_eq!(ctx.value(&zero).unwrap(), 0.0);
        assert_eq!(objective_gradient(&ctx, &zero).unwrap(), zero);

        let mut y = DMatrix::zeros(3, 2);
        y[(0, 0)] = 1.0;
        y[(1, 1)] = 1.0;
        let ctx = ObjectiveContext::unperturbed(DMatrix::from_element(3, 2, 0.5), y, 1.0, LossSpec::mlsm(2)).unwrap();
        assert_relative_eq!(ctx.value(&zero).unwrap(), std::f64::consts::LN_2, max_relative = 1e-15);
    }

    #[test]
    fn noise_term_is_elementwise_sum() {
        let loss = LossSpec::pseudo_huber(2, 0.5);
        let n1 = 4;
        let z = DMatrix::zeros(n1, 3);
        let mut b = DMatrix::zeros(3, 2);
        b[(1, 0)] = 1.0;
        let mut ctx = ObjectiveContext::new(z, DMatrix::zeros(n1, 2), 1.0, 0.0, b, loss).unwrap();
        ctx.lambda = 1e-300;
        let mut theta = DMatrix::zeros(3, 2);
        theta[(1, 0)] = 1.0;
        assert_relative_eq!(ctx.value(&theta).unwrap(), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn quadratic_part_gradient() {
        let mut ctx = small_ctx(LossSpec::mlsm(2));
        ctx.loss_weight = 0.0;
        ctx.b.fill(0.0);
        let theta = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let g = objective_gradient(&ctx, &theta).unwrap();
        assert_abs_diff_eq!(g, &theta * 0.3, epsilon = 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        for loss in [LossSpec::mlsm(2), LossSpec::pseudo_huber(2, 0.5)] {
            let ctx = small_ctx(loss);
            let theta = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 2.0, 0.1]);
            let g = objective_gradient(&ctx, &theta).unwrap();
            let h = 1e-5;
            for i in 0..2 {
                for j in 0..2 {
                    let mut p = theta.clone();
                    p[(i, j)] += h;
                    let mut m = theta.clone();
                    m[(i, j)] -= h;
                    let fd = (ctx.value(&p).unwrap() - ctx.value(&m).unwrap()) / (2.0 * h);
                    assert_relative_eq!(g[(i, j)], fd, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn unperturbed_matches_independent_sum() {
        let mut ctx = small_ctx(LossSpec::mlsm(2));
        ctx.b.fill(0.0);
        ctx.lambda_prime = 0.0;
        let theta = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 2.0, 0.1]);
        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                let s: f64 = (0..2).map(|k| ctx.z[(i, k)] * theta[(k, j)]).sum();
                want += mlsm_reference(s, ctx.y[(i, j)], 2.0)[0];
            }
        }
        want = want / 3.0 + 0.1 * theta.iter().map(|t| t * t).sum::<f64>();
        assert_relative_eq!(ctx.value(&theta).unwrap(), want, max_relative = 1e-13);
        assert_relative_eq!(ctx.regularized_loss(&theta).unwrap(), want, max_relative = 1e-13);
    }

    #[test]
    fn dimension_checks() {
        let ctx = small_ctx(LossSpec::mlsm(2));
        assert!(matches!(ctx.value(&DMatrix::zeros(3, 2)), Err(Error::Dimension(_))));
        let loss = LossSpec::mlsm(2);
        assert!(ObjectiveContext::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 2),
            1.0,
            0.0,
            DMatrix::zeros(2, 2),
            loss
        )
        .is_err());
        assert!(ObjectiveContext::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_element(2, 2, 0.5),
            1.0,
            0.0,
            DMatrix::zeros(2, 2),
            loss
        )
        .is_err());
    }

    #[test]
    fn convexity_probe_quadratic_is_tight() {
        let mut ctx = small_ctx(LossSpec::mlsm(2));
        ctx.loss_weight = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = convexity_probe(&ctx, 200, 3.0, &mut rng).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.max_violation < 1e-12);
        assert!(r.min_margin.abs() < 1e-12 && r.mean_margin.abs() < 1e-12);
    }

    #[test]
    fn convexity_margin_grows_with_loss_curvature_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for reg in [0.01, 1.0] {
            let mut ctx = small_ctx(LossSpec::mlsm(2));
            ctx.lambda = reg;
            ctx.lambda_prime = 0.0;
            let r = convexity_probe(&ctx, 500, 3.0, &mut rng).unwrap();
            assert_eq!(r.violations, 0);
            assert!(r.min_margin > -1e-9);
        }
    }
}
