//! Technical-efficiency scores `E[e^{−U} | ε]` from a fitted model.
//!
//! Conditional on the composed residual `ε = v − u`, the inefficiency `U` is
//! normal with location `μ_*` and scale `σ_*` truncated to `[0, ∞)`, so
//!
//! ```text
//! TE = Φ(μ_*/σ_* − σ_*) / Φ(μ_*/σ_*) · exp(−μ_* + σ_*²/2).
//! ```
//!
//! Everything is evaluated in the log domain so extreme residuals neither
//! overflow nor produce scores above one.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SfaError};
use crate::fit::FitResult;
use crate::model::PseudoFamily;
use crate::stats::log_std_normal_cdf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TEScores {
    pub te: Vec<f64>,
    pub mu_star: Vec<f64>,
    pub sigma_star: f64,
    pub residuals: Vec<f64>,
}

/// Location and scale of `U | ε`.
pub fn conditional_parameters(
    family: PseudoFamily,
    eps: f64,
    mu: f64,
    sigma_v: f64,
    sigma_u: f64,
) -> (f64, f64) {
    match family {
        PseudoFamily::Nh | PseudoFamily::Nt => {
            let (sv2, su2) = (sigma_v * sigma_v, sigma_u * sigma_u);
            let s2 = sv2 + su2;
            let mu = if family == PseudoFamily::Nt { mu } else { 0.0 };
            ((-eps * su2 + mu * sv2) / s2, (sv2 * su2 / s2).sqrt())
        }
        PseudoFamily::Ne => (-eps - sigma_v * sigma_v / sigma_u, sigma_v),
    }
}

/// `E[e^{−U} | ε]` for one residual, kept inside `(0, 1]`.
pub fn te_score(family: PseudoFamily, eps: f64, mu: f64, sigma_v: f64, sigma_u: f64) -> f64 {
    let (m, s) = conditional_parameters(family, eps, mu, sigma_v, sigma_u);
    let r = m / s;
    let log_te = log_std_normal_cdf(r - s) - log_std_normal_cdf(r) - m + 0.5 * s * s;
    // rounding can push the log a hair above zero when σ_* is tiny; scores
    // far out in the lower tail underflow and are held at the smallest
    // normal double
    log_te.min(0.0).exp().max(f64::MIN_POSITIVE)
}

/// Scores for every row of `data` under a converged fit.
pub fn technical_efficiency(fit: &FitResult, data: &Dataset) -> Result<TEScores> {
    if !fit.converged {
        return Err(SfaError::NonConvergence(
            "technical efficiency needs a converged fit".into(),
        ));
    }
    if data.num_inputs() != fit.model.frontier.num_inputs {
        return Err(SfaError::Dimension {
            expected: fit.model.frontier.num_inputs,
            got: data.num_inputs(),
        });
    }
    let th = &fit.theta_hat;
    let family = fit.model.family;
    let mu = th.mu_or_zero();
    let residuals: Vec<f64> = (0..data.len())
        .map(|i| fit.model.residual(th, data.inputs(i), data.y(i)))
        .collect();
    let mut te = Vec::with_capacity(residuals.len());
    let mut mu_star = Vec::with_capacity(residuals.len());
    let mut sigma_star = 0.0;
    for &e in &residuals {
        let (m, s) = conditional_parameters(family, e, mu, th.sigma_v, th.sigma_u);
        mu_star.push(m);
        sigma_star = s;
        te.push(te_score(family, e, mu, th.sigma_v, th.sigma_u));
    }
    if residuals.is_empty() {
        sigma_star = conditional_parameters(family, 0.0, mu, th.sigma_v, th.sigma_u).1;
    }
    Ok(TEScores {
        te,
        mu_star,
        sigma_star,
        residuals,
    })
}

/// `(1/n) Σ (te_i − e^{−U_i})²` over rows whose true inefficiency is known.
pub fn mse_te(scores: &TEScores, true_u: &[Option<f64>]) -> Result<f64> {
    if scores.te.len() != true_u.len() {
        return Err(SfaError::Dimension {
            expected: scores.te.len(),
            got: true_u.len(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, u) in scores.te.iter().zip(true_u) {
        if let Some(u) = u {
            sum += (t - (-u).exp()).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(SfaError::UndefinedMetric(
            "no rows with known inefficiency".into(),
        ));
    }
    Ok(sum / count as f64)
}
