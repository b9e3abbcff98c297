//! Noise calibration for objective perturbation.
//!
//! Given the privacy budget, the loss and the propagation setup, the
//! quantities are computed strictly in this order:
//!
//! 1. loss derivative suprema `c1, c2, c3`
//! 2. feature sensitivity `Ψ(Z)`
//! 3. `c_sf`, the `1 - δ/c` quantile of the unit-rate Erlang(d) law
//! 4. the regularizer floor `Λ = max(Λ, c·c2·Ψ·c_sf/(n1·ω·ε) + ξ)`
//! 5. `c_θ = (n1ωε·c1 + c·c1·Ψ·c_sf) / (n1ωε·Λ - c·c2·Ψ·c_sf)`
//! 6. `ε_Λ = c·d·ln(1 + (2c2 + c3·c_θ)·Ψ / (d·n1·Λ))`
//! 7. `Λ' = 0` if `ε_Λ <= (1-ω)ε`, else `c(2c2 + c3·c_θ)Ψ / (n1(1-ω)ε) - Λ`
//! 8. `β = max(ε - ε_Λ, ωε) / (c(c1 + c2·c_θ)Ψ)`
//!
//! When `Ψ(Z) = 0` the features do not depend on the edges at all and no
//! noise is needed; `β` is then reported as `None`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{derivative_suprema, LossSpec};
use crate::propagation::PropagationConfig;
use crate::sensitivity::sensitivity_bound;

pub const DEFAULT_OMEGA: f64 = 0.9;
pub const DEFAULT_XI: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    /// Share of `ε` reserved for the noise density term.
    pub omega: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        PrivacyBudget {
            epsilon,
            delta,
            omega: DEFAULT_OMEGA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(Error::param("omega", format!("must lie in (0, 1), got {}", self.omega)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    LambdaPrimeZero,
    LambdaPrimePositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub budget: PrivacyBudget,
    pub n1: usize,
    pub d: usize,
    pub classes: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub psi_z: f64,
    pub c_sf: f64,
    pub lambda_in: f64,
    pub lambda_eff: f64,
    pub xi: f64,
    pub c_theta: f64,
    pub epsilon_lambda: f64,
    pub lambda_prime: f64,
    /// Erlang rate of the noise radius; `None` on the noise-free path.
    pub beta: Option<f64>,
    pub branch: Branch,
    pub noise_free: bool,
}

impl CalibrationResult {
    /// `(Jacobian exponent, density exponent)`:
    /// `min(ε_Λ, ε - ωε)` and `max(ε - ε_Λ, ωε)`.
    pub fn budget_split(&self) -> (f64, f64) {
        let PrivacyBudget { epsilon, omega, .. } = self.budget;
        (
            self.epsilon_lambda.min(epsilon - omega * epsilon),
            (epsilon - self.epsilon_lambda).max(omega * epsilon),
        )
    }

    /// Lower bound the effective regularizer must exceed (before adding `ξ`).
    pub fn lambda_floor(&self) -> f64 {
        let PrivacyBudget { epsilon, omega, .. } = self.budget;
        self.classes as f64 * self.c2 * self.psi_z * self.c_sf / (self.n1 as f64 * omega * epsilon)
    }
}

fn ln_factorials(up_to: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(up_to + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=up_to {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// `ln Q(d, u)` where `Q(d, u) = e^{-u} Σ_{k<d} u^k / k!` is the upper tail of
/// the unit-rate Erlang(d) distribution.
fn ln_erlang_upper_tail(d: usize, u: f64, ln_fact: &[f64]) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let lu = u.ln();
    let terms = (0..d).map(|k| k as f64 * lu - ln_fact[k]);
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.map(|t| (t - max).exp()).sum();
    -u + max + sum.ln()
}

/// Regularized lower incomplete gamma `P(d, u)` for integer `d`.
pub fn erlang_cdf(d: usize, u: f64) -> f64 {
    let lf = ln_factorials(d);
    -ln_erlang_upper_tail(d, u, &lf).exp_m1()
}

/// Smallest `u > 0` with `P(d, u) >= 1 - δ/c`, found by bisection in log space.
pub fn compute_c_sf(d: usize, delta: f64, classes: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::param("d", "dimension must be at least 1"));
    }
    if classes == 0 {
        return Err(Error::param("classes", "must be at least 1"));
    }
    let q = delta / classes as f64;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::param("delta", format!("δ/c must lie in (0, 1), got {q}")));
    }
    let ln_q = q.ln();
    let lf = ln_factorials(d);
    let df = d as f64;
    let mut hi = df + 40.0 * df.sqrt() + 40.0 * (1.0 / q).ln();
    while ln_erlang_upper_tail(d, hi, &lf) > ln_q {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ln_erlang_upper_tail(d, mid, &lf) <= ln_q {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(hi)
}

/// Runs the full calibration cascade.
pub fn calibrate(
    budget: PrivacyBudget,
    loss: &LossSpec,
    cfg: &PropagationConfig,
    n1: usize,
    d: usize,
    lambda_in: f64,
    xi: f64,
) -> Result<CalibrationResult> {
    budget.validate()?;
    loss.validate()?;
    cfg.validate()?;
    if n1 == 0 {
        return Err(Error::param("n1", "need at least one training node"));
    }
    if !(lambda_in > 0.0) {
        return Err(Error::param("lambda", format!("must be positive, got {lambda_in}")));
    }
    if !(xi > 0.0) {
        return Err(Error::param("xi", format!("must be positive, got {xi}")));
    }
    let PrivacyBudget { epsilon, delta, omega } = budget;
    let c = loss.classes as f64;
    let (n1f, df) = (n1 as f64, d as f64);

    let sup = derivative_suprema(loss);
    let (c1, c2, c3) = (sup.c1, sup.c2, sup.c3);
    let psi_z = sensitivity_bound(cfg);
    let c_sf = compute_c_sf(d, delta, loss.classes)?;

    let scaled_budget = n1f * omega * epsilon;
    let lambda_eff = lambda_in.max(c * c2 * psi_z * c_sf / scaled_budget + xi);

    let denom = scaled_budget * lambda_eff - c * c2 * psi_z * c_sf;
    if !(denom > 0.0) {
        return Err(Error::Calibration(format!(
            "c_θ denominator {denom:e} is not positive"
        )));
    }
    let c_theta = (scaled_budget * c1 + c * c1 * psi_z * c_sf) / denom;

    let jac = (2.0 * c2 + c3 * c_theta) * psi_z;
    let epsilon_lambda = c * df * (jac / (df * n1f * lambda_eff)).ln_1p();

    let (lambda_prime, branch) = if epsilon_lambda <= (1.0 - omega) * epsilon {
        (0.0, Branch::LambdaPrimeZero)
    } else {
        (
            c * jac / (n1f * (1.0 - omega) * epsilon) - lambda_eff,
            Branch::LambdaPrimePositive,
        )
    };

    let noise_free = psi_z == 0.0;
    let beta = if noise_free {
        None
    } else {
        let b = (epsilon - epsilon_lambda).max(omega * epsilon) / (c * (c1 + c2 * c_theta) * psi_z);
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Calibration(format!("β = {b} is not a positive finite number")));
        }
        Some(b)
    };

    Ok(CalibrationResult {
        budget,
        n1,
        d,
        classes: loss.classes,
        c1,
        c2,
        c3,
        psi_z,
        c_sf,
        lambda_in,
        lambda_eff,
        xi,
        c_theta,
        epsilon_lambda,
        lambda_prime,
        beta,
        branch,
        noise_free,
    })
}

/// Human-readable privacy accounting for one calibrated run.
pub fn privacy_report(r: &CalibrationResult) -> String {
    let PrivacyBudget { epsilon, delta, omega } = r.budget;
    let (jac, dens) = r.budget_split();
    let mut s = String::new();
    let _ = writeln!(s, "# privacy accounting");
    let _ = writeln!(s, "epsilon = {epsilon}");
    let _ = writeln!(s, "delta = {delta}");
    let _ = writeln!(s, "omega = {omega}");
    let _ = writeln!(s, "n1 = {}", r.n1);
    let _ = writeln!(s, "d = {}", r.d);
    let _ = writeln!(s, "classes = {}", r.classes);
    let _ = writeln!(s, "c1 = {}", r.c1);
    let _ = writeln!(s, "c2 = {}", r.c2);
    let _ = writeln!(s, "c3 = {}", r.c3);
    let _ = writeln!(s, "psi_z = {}", r.psi_z);
    let _ = writeln!(s, "c_sf = {}", r.c_sf);
    let _ = writeln!(s, "xi = {}", r.xi);
    let _ = writeln!(s, "lambda_in = {}", r.lambda_in);
    let _ = writeln!(s, "lambda_eff = {}", r.lambda_eff);
    let _ = writeln!(s, "lambda_floor = {}", r.lambda_floor());
    let _ = writeln!(s, "c_theta = {}", r.c_theta);
    let _ = writeln!(s, "epsilon_lambda = {}", r.epsilon_lambda);
    let _ = writeln!(s, "(1-omega)*epsilon = {}", (1.0 - omega) * epsilon);
    let branch = match r.branch {
        Branch::LambdaPrimeZero => "lambda_prime_zero (epsilon_lambda <= (1-omega)*epsilon)",
        Branch::LambdaPrimePositive => "lambda_prime_positive (epsilon_lambda > (1-omega)*epsilon)",
    };
    let _ = writeln!(s, "branch = {branch}");
    let _ = writeln!(s, "lambda_prime = {}", r.lambda_prime);
    match r.beta {
        Some(b) => {
            let _ = writeln!(s, "beta = {b}");
            let _ = writeln!(s, "expected_noise_radius = {}", r.d as f64 / b);
        }
        None => {
            let _ = writeln!(s, "beta = none (sensitivity is zero; no noise injected)");
        }
    }
    let _ = writeln!(s, "noise_free = {}", r.noise_free);
    let _ = writeln!(s, "jacobian_exponent = {jac}");
    let _ = writeln!(s, "density_exponent = {dens}");
    let _ = writeln!(s, "total_exponent = {}", jac + dens);
    s
}
