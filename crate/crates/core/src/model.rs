//! Pseudo conditional densities of the stochastic frontier model
//! `Y = g(X, β) + V − U` with normal noise `V` and one of three inefficiency
//! laws for `U`:
//!
//! * `NT`: `U ~ N⁺(μ, σ_u²)` (truncated normal),
//! * `NH`: `U ~ N⁺(0, σ_u²)` (half normal, `NT` with `μ = 0`),
//! * `NE`: `U ~ Exp` with mean `σ_u`.
//!
//! Every density depends on the data only through the residual
//! `ε = y − g(x, β)`, so the kernels here work on `ε` and the frontier maps
//! residual derivatives back onto `β`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfaError};
use crate::stats::{log_std_normal_cdf, log_std_normal_pdf, mills_ratio, FRAC_1_SQRT_2PI};

/// Smallest admissible noise or inefficiency scale.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoFamily {
    Nt,
    Nh,
    Ne,
}

impl PseudoFamily {
    pub fn has_mu(self) -> bool {
        matches!(self, PseudoFamily::Nt)
    }
}

impl fmt::Display for PseudoFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PseudoFamily::Nt => "nt",
            PseudoFamily::Nh => "nh",
            PseudoFamily::Ne => "ne",
        };
        f.write_str(s)
    }
}

impl FromStr for PseudoFamily {
    type Err = SfaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nt" => Ok(PseudoFamily::Nt),
            "nh" => Ok(PseudoFamily::Nh),
            "ne" => Ok(PseudoFamily::Ne),
            other => Err(SfaError::Invalid(format!("unknown family '{other}'"))),
        }
    }
}

/// Linear frontier `g(x, β) = β₀ + β₁x₁ + … + β_p x_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontierSpec {
    pub has_intercept: bool,
    pub num_inputs: usize,
}

impl FrontierSpec {
    pub fn new(num_inputs: usize) -> Self {
        Self {
            has_intercept: true,
            num_inputs,
        }
    }

    /// Number of frontier coefficients `q`.
    pub fn num_coefficients(&self) -> usize {
        self.num_inputs + usize::from(self.has_intercept)
    }

    pub fn eval(&self, beta: &[f64], x: &[f64]) -> f64 {
        debug_assert_eq!(beta.len(), self.num_coefficients());
        debug_assert_eq!(x.len(), self.num_inputs);
        if self.has_intercept {
            beta[0] + beta[1..].iter().zip(x).map(|(b, xi)| b * xi).sum::<f64>()
        } else {
            beta.iter().zip(x).map(|(b, xi)| b * xi).sum()
        }
    }

    /// `∂g/∂β`, i.e. the augmented input row `x̃`.
    pub fn design_row(&self, x: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.num_coefficients());
        if self.has_intercept {
            row.push(1.0);
        }
        row.extend_from_slice(x);
        row
    }
}

/// Model parameters `(β, μ, σ_v, σ_u)`; `μ` exists only for `NT`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: Vec<f64>,
    pub mu: Option<f64>,
    pub sigma_v: f64,
    pub sigma_u: f64,
}

impl Theta {
    pub fn new(beta: Vec<f64>, mu: Option<f64>, sigma_v: f64, sigma_u: f64) -> Self {
        Self {
            beta,
            mu,
            sigma_v,
            sigma_u,
        }
    }

    /// Build from `(β, σ_v², σ_u²)` as the simulation tables report them.
    pub fn from_variances(beta: Vec<f64>, sigma_v2: f64, sigma_u2: f64) -> Self {
        Self::new(beta, None, sigma_v2.sqrt(), sigma_u2.sqrt())
    }

    pub fn mu_or_zero(&self) -> f64 {
        self.mu.unwrap_or(0.0)
    }

    pub fn sigma_v2(&self) -> f64 {
        self.sigma_v * self.sigma_v
    }

    pub fn sigma_u2(&self) -> f64 {
        self.sigma_u * self.sigma_u
    }

    /// `σ² = σ_v² + σ_u²`
    pub fn sigma2(&self) -> f64 {
        self.sigma_v2() + self.sigma_u2()
    }

    /// `γ = σ_u / σ_v`
    pub fn gamma(&self) -> f64 {
        self.sigma_u / self.sigma_v
    }

    pub fn dim(&self) -> usize {
        self.beta.len() + usize::from(self.mu.is_some()) + 2
    }

    /// Flatten to `[β…, μ?, σ_v, σ_u]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        if let Some(mu) = self.mu {
            v.push(mu);
        }
        v.push(self.sigma_v);
        v.push(self.sigma_u);
        v
    }

    pub fn from_vec(family: PseudoFamily, q: usize, v: &[f64]) -> Result<Self> {
        let expected = q + usize::from(family.has_mu()) + 2;
        if v.len() != expected {
            return Err(SfaError::Dimension {
                expected,
                got: v.len(),
            });
        }
        let beta = v[..q].to_vec();
        let (mu, rest) = if family.has_mu() {
            (Some(v[q]), &v[q + 1..])
        } else {
            (None, &v[q..])
        };
        Ok(Self::new(beta, mu, rest[0], rest[1]))
    }

    pub fn validate(&self, family: PseudoFamily, frontier: &FrontierSpec) -> Result<()> {
        if self.beta.len() != frontier.num_coefficients() {
            return Err(SfaError::Dimension {
                expected: frontier.num_coefficients(),
                got: self.beta.len(),
            });
        }
        if family.has_mu() != self.mu.is_some() {
            return Err(SfaError::ParameterDomain(format!(
                "mu must be present exactly for the nt family (family {family})"
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) || !self.mu_or_zero().is_finite() {
            return Err(SfaError::ParameterDomain("non-finite coefficient".into()));
        }
        for (name, s) in [("sigma_v", self.sigma_v), ("sigma_u", self.sigma_u)] {
            if !(s >= SIGMA_FLOOR) || !s.is_finite() {
                return Err(SfaError::ParameterDomain(format!(
                    "{name} = {s} is below the floor {SIGMA_FLOOR}"
                )));
            }
        }
        Ok(())
    }
}

/// `ln f` and its partial derivatives with respect to the residual and the
/// scale parameters. `d_mu` is zero outside `NT`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualScore {
    pub log_f: f64,
    pub d_eps: f64,
    pub d_mu: f64,
    pub d_sigma_v: f64,
    pub d_sigma_u: f64,
}

/// Per-θ constants of a residual density, so repeated evaluation over a
/// sample only pays for the `ε`-dependent part.
#[derive(Debug, Clone, Copy)]
pub struct ResidualDensity {
    family: PseudoFamily,
    mu: f64,
    sv: f64,
    su: f64,
    sigma: f64,
    lambda: f64,
    /// `−ln σ − ln A` for NT/NH, `−ln σ_u + σ_v²/(2σ_u²)` for NE.
    log_norm: f64,
    /// `φ(μ/σ_u)/Φ(μ/σ_u)`, NT only.
    mills_a: f64,
}

impl ResidualDensity {
    pub fn new(family: PseudoFamily, mu: f64, sigma_v: f64, sigma_u: f64) -> Self {
        let sigma = sigma_v.hypot(sigma_u);
        let lambda = sigma_u / sigma_v;
        let (log_norm, mills_a) = match family {
            PseudoFamily::Nt => {
                let a = mu / sigma_u;
                (-sigma.ln() - log_std_normal_cdf(a), mills_ratio(a))
            }
            PseudoFamily::Nh => (-sigma.ln() + std::f64::consts::LN_2, 0.0),
            PseudoFamily::Ne => (-sigma_u.ln() + 0.5 * (sigma_v / sigma_u).powi(2), 0.0),
        };
        Self {
            family,
            mu: if family.has_mu() { mu } else { 0.0 },
            sv: sigma_v,
            su: sigma_u,
            sigma,
            lambda,
            log_norm,
            mills_a,
        }
    }

    pub fn from_theta(family: PseudoFamily, theta: &Theta) -> Self {
        Self::new(family, theta.mu_or_zero(), theta.sigma_v, theta.sigma_u)
    }

    pub fn family(&self) -> PseudoFamily {
        self.family
    }

    /// Lower and upper end of a residual window holding all but a negligible
    /// fraction of the mass: `halfwidth` noise scales above the frontier and
    /// the inefficiency tail plus `halfwidth` noise scales below it.
    pub fn window(&self, halfwidth: f64) -> (f64, f64) {
        let tail_u = match self.family {
            PseudoFamily::Nt | PseudoFamily::Nh => self.mu.max(0.0) + halfwidth * self.su,
            // exponential tail: e^{-40} is below any tolerance in use
            PseudoFamily::Ne => 40.0f64.max(halfwidth) * self.su,
        };
        (-(tail_u + halfwidth * self.sv), halfwidth * self.sv)
    }

    #[inline]
    pub fn log_density(&self, eps: f64) -> f64 {
        match self.family {
            PseudoFamily::Nt | PseudoFamily::Nh => {
                let d1 = (eps + self.mu) / self.sigma;
                let d2 = self.mu / (self.sigma * self.lambda) - self.lambda * eps / self.sigma;
                self.log_norm + log_std_normal_pdf(d1) + log_std_normal_cdf(d2)
            }
            PseudoFamily::Ne => {
                let xi = -eps / self.sv - self.sv / self.su;
                self.log_norm + log_std_normal_cdf(xi) + eps / self.su
            }
        }
    }

    pub fn score(&self, eps: f64) -> ResidualScore {
        let (sv, su, sigma) = (self.sv, self.su, self.sigma);
        match self.family {
            PseudoFamily::Nt | PseudoFamily::Nh => {
                let mu = self.mu;
                let lambda = self.lambda;
                let s2 = sigma * sigma;
                let d1 = (eps + mu) / sigma;
                let d2 = mu / (sigma * lambda) - lambda * eps / sigma;
                let m2 = mills_ratio(d2);
                let log_f = self.log_norm + log_std_normal_pdf(d1) + log_std_normal_cdf(d2);

                let d_eps = -d1 / sigma - m2 * lambda / sigma;
                let d_mu = if self.family == PseudoFamily::Nt {
                    -self.mills_a / su - d1 / sigma + m2 / (sigma * lambda)
                } else {
                    0.0
                };
                let dd2_dsv = (mu / su + su * eps / (sv * sv)) / sigma - d2 * sv / s2;
                let dd2_dsu = (-mu * sv / (su * su) - eps / sv) / sigma - d2 * su / s2;
                let mut d_sigma_u = -su / s2 + d1 * d1 * su / s2 + m2 * dd2_dsu;
                if self.family == PseudoFamily::Nt {
                    d_sigma_u += self.mills_a * mu / (su * su);
                }
                ResidualScore {
                    log_f,
                    d_eps,
                    d_mu,
                    d_sigma_v: -sv / s2 + d1 * d1 * sv / s2 + m2 * dd2_dsv,
                    d_sigma_u,
                }
            }
            PseudoFamily::Ne => {
                let xi = -eps / sv - sv / su;
                let m = mills_ratio(xi);
                ResidualScore {
                    log_f: self.log_norm + log_std_normal_cdf(xi) + eps / su,
                    d_eps: -m / sv + 1.0 / su,
                    d_mu: 0.0,
                    d_sigma_v: m * (eps / (sv * sv) - 1.0 / su) + sv / (su * su),
                    // (σ_v/σ_u²)·ξ collects ∂/∂σ_u of ε/σ_u + σ_v²/(2σ_u²)
                    d_sigma_u: -1.0 / su + m * sv / (su * su) + sv * xi / (su * su),
                }
            }
        }
    }
}

/// A pseudo family together with its frontier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SfModel {
    pub family: PseudoFamily,
    pub frontier: FrontierSpec,
}

impl SfModel {
    pub fn new(family: PseudoFamily, frontier: FrontierSpec) -> Self {
        Self { family, frontier }
    }

    /// Dimension of the flattened parameter vector.
    pub fn dim(&self) -> usize {
        self.frontier.num_coefficients() + usize::from(self.family.has_mu()) + 2
    }

    pub fn residual(&self, theta: &Theta, x: &[f64], y: f64) -> f64 {
        y - self.frontier.eval(&theta.beta, x)
    }

    pub fn log_density(&self, theta: &Theta, x: &[f64], y: f64) -> Result<f64> {
        theta.validate(self.family, &self.frontier)?;
        let dens = ResidualDensity::from_theta(self.family, theta);
        Ok(dens.log_density(self.residual(theta, x, y)))
    }

    /// `∂ ln f_θ(y|x) / ∂θ` in the flattened layout.
    pub fn log_density_gradient(&self, theta: &Theta, x: &[f64], y: f64) -> Result<Vec<f64>> {
        theta.validate(self.family, &self.frontier)?;
        let dens = ResidualDensity::from_theta(self.family, theta);
        let s = dens.score(self.residual(theta, x, y));
        Ok(self.expand_score(&s, x))
    }

    /// `∂ f_θ(y|x) / ∂θ = f_θ · ∂ ln f_θ / ∂θ`.
    pub fn density_gradient(&self, theta: &Theta, x: &[f64], y: f64) -> Result<Vec<f64>> {
        theta.validate(self.family, &self.frontier)?;
        let dens = ResidualDensity::from_theta(self.family, theta);
        let s = dens.score(self.residual(theta, x, y));
        let f = s.log_f.exp();
        Ok(self
            .expand_score(&s, x)
            .into_iter()
            .map(|g| f * g)
            .collect())
    }

    /// Map a residual score onto the flattened parameter layout; `ε` moves
    /// against `g`, so `∂/∂β = −x̃ ∂/∂ε`.
    pub fn expand_score(&self, s: &ResidualScore, x: &[f64]) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.dim());
        if self.frontier.has_intercept {
            g.push(-s.d_eps);
        }
        g.extend(x.iter().map(|xi| -s.d_eps * xi));
        if self.family.has_mu() {
            g.push(s.d_mu);
        }
        g.push(s.d_sigma_v);
        g.push(s.d_sigma_u);
        g
    }
}

/// Parameter box for the density bound; `mu` is ignored outside `NT`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBox {
    pub mu: (f64, f64),
    pub sigma_v: (f64, f64),
    pub sigma_u: (f64, f64),
}

/// A constant `C` with `f_θ(y|x) ≤ C` for every θ in the box and every
/// `(x, y)`.
///
/// NT/NH: `φ(0) / (σ̲ · [1 − Φ(max|μ|/σ̲)])`. NE:
/// `σ̲⁻¹ e^{σ̄²/σ̲²} [sup_{z>0} Φ(−z/σ̄) e^{z/σ̲} + 1]`, with `σ̲`/`σ̄` the
/// smallest/largest scale in the box.
pub fn density_upper_bound(family: PseudoFamily, bounds: &ParamBox) -> Result<f64> {
    let lo = bounds.sigma_v.0.min(bounds.sigma_u.0);
    let hi = bounds.sigma_v.1.max(bounds.sigma_u.1);
    if !(lo >= SIGMA_FLOOR) || !(hi >= lo) {
        return Err(SfaError::ParameterDomain(format!(
            "scale box [{lo}, {hi}] violates the floor {SIGMA_FLOOR}"
        )));
    }
    match family {
        PseudoFamily::Nt | PseudoFamily::Nh => {
            let mu_abs = if family.has_mu() {
                bounds.mu.0.abs().max(bounds.mu.1.abs())
            } else {
                0.0
            };
            // 1 − Φ(t) = Φ(−t)
            let log_a_min = log_std_normal_cdf(-mu_abs / lo);
            Ok((FRAC_1_SQRT_2PI.ln() - lo.ln() - log_a_min).exp())
        }
        PseudoFamily::Ne => {
            let log_sup = sup_log_tail(hi, lo);
            let log_c = -lo.ln() + (hi / lo).powi(2) + (log_sup.exp() + 1.0).ln();
            Ok(log_c.exp())
        }
    }
}

/// `sup_{z ≥ 0} ln Φ(−z/a) + z/b`. The objective is concave in `z`; its
/// stationary point solves `M(−z/a) = a/b` with `M` the Mills ratio.
fn sup_log_tail(a: f64, b: f64) -> f64 {
    let target = a / b;
    if mills_ratio(0.0) >= target {
        return log_std_normal_cdf(0.0);
    }
    // M(−t) ≈ t for large t, so the root in t lies below target + 1
    let (mut lo, mut hi) = (0.0, target + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mills_ratio(-mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let z = t * a;
    log_std_normal_cdf(-t) + z / b
}
