//! The density power divergence loss
//!
//! ```text
//! H_α(x, y; θ) = ∫ f_θ^{1+α}(t|x) dt − (1 + 1/α) f_θ^α(y|x)    α > 0
//! H_0(x, y; θ) = −ln f_θ(y|x)
//! ```
//!
//! its gradient, the power integrals behind it, and the `J`/`K` matrices of
//! the sandwich covariance.
//!
//! For a linear frontier the model term `∫ f^{1+α}` only depends on the
//! scale parameters, so one quadrature per θ serves the whole sample.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SfaError};
use crate::model::{ResidualDensity, SfModel, Theta};
use crate::quadrature::{integrate, QuadratureConfig};

/// Robustness tuning parameter `α ∈ [0, 1]`; `α = 0` is quasi maximum
/// likelihood.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub const ZERO: Alpha = Alpha(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Alpha(value))
        } else {
            Err(SfaError::ParameterDomain(format!(
                "alpha must lie in [0, 1], got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = SfaError;
    fn try_from(v: f64) -> Result<Self> {
        Alpha::new(v)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// `∫ f^{1+α}` together with `∫ s · f^{1+α}` for each residual score `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerMoments {
    pub integral: f64,
    pub eps: f64,
    pub mu: f64,
    pub sigma_v: f64,
    pub sigma_u: f64,
}

impl PowerMoments {
    /// `∫ U_θ f^{1+α} dy` in the flattened parameter layout at input `x`.
    pub fn score_integral(&self, model: &SfModel, x: &[f64]) -> Vec<f64> {
        let s = crate::model::ResidualScore {
            log_f: 0.0,
            d_eps: self.eps,
            d_mu: self.mu,
            d_sigma_v: self.sigma_v,
            d_sigma_u: self.sigma_u,
        };
        model.expand_score(&s, x)
    }
}

fn breakpoints(dens: &ResidualDensity, quad: &QuadratureConfig) -> Vec<f64> {
    let (lo, hi) = dens.window(quad.window_halfwidth_sigmas);
    let mut breaks = vec![lo];
    let mid = 0.5 * lo;
    if mid > lo && mid < 0.0 {
        breaks.push(mid);
    }
    breaks.push(0.0);
    breaks.push(hi);
    breaks
}

/// `∫ f^{1+α}(ε) dε` over the residual density.
pub fn residual_power_integral(
    dens: &ResidualDensity,
    alpha: Alpha,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let p = 1.0 + alpha.value();
    let r = integrate(
        |eps, out| out[0] = (p * dens.log_density(eps)).exp(),
        1,
        &breakpoints(dens, quad),
        4,
        quad.rel_tol,
        quad.abs_tol,
        quad.max_subdivisions,
    )?;
    Ok(r.values[0])
}

/// Power integral and score moments in one adaptive pass.
pub fn power_moments(
    dens: &ResidualDensity,
    alpha: Alpha,
    quad: &QuadratureConfig,
) -> Result<PowerMoments> {
    let p = 1.0 + alpha.value();
    let r = integrate(
        |eps, out| {
            let s = dens.score(eps);
            let w = (p * s.log_f).exp();
            out[0] = w;
            out[1] = w * s.d_eps;
            out[2] = w * s.d_mu;
            out[3] = w * s.d_sigma_v;
            out[4] = w * s.d_sigma_u;
        },
        5,
        &breakpoints(dens, quad),
        4,
        quad.rel_tol,
        quad.abs_tol,
        quad.max_subdivisions,
    )?;
    let v = &r.values;
    Ok(PowerMoments {
        integral: v[0],
        eps: v[1],
        mu: v[2],
        sigma_v: v[3],
        sigma_u: v[4],
    })
}

/// `∫ f_θ^{1+α}(y|x) dy`.
pub fn power_integral(
    model: &SfModel,
    theta: &Theta,
    _x: &[f64],
    alpha: Alpha,
    quad: &QuadratureConfig,
) -> Result<f64> {
    theta.validate(model.family, &model.frontier)?;
    let dens = ResidualDensity::from_theta(model.family, theta);
    residual_power_integral(&dens, alpha, quad)
}

#[inline]
fn h_from_parts(alpha: Alpha, integral: f64, log_f: f64) -> f64 {
    if alpha.is_zero() {
        -log_f
    } else {
        let a = alpha.value();
        integral - (1.0 + 1.0 / a) * (a * log_f).exp()
    }
}

pub fn h_alpha(
    model: &SfModel,
    theta: &Theta,
    x: &[f64],
    y: f64,
    alpha: Alpha,
    quad: &QuadratureConfig,
) -> Result<f64> {
    theta.validate(model.family, &model.frontier)?;
    let dens = ResidualDensity::from_theta(model.family, theta);
    let log_f = dens.log_density(model.residual(theta, x, y));
    let integral = if alpha.is_zero() {
        0.0
    } else {
        residual_power_integral(&dens, alpha, quad)?
    };
    Ok(h_from_parts(alpha, integral, log_f))
}

fn h_gradient_from_parts(
    model: &SfModel,
    dens: &ResidualDensity,
    moments: Option<&PowerMoments>,
    theta: &Theta,
    x: &[f64],
    y: f64,
    alpha: Alpha,
) -> Vec<f64> {
    let s = dens.score(model.residual(theta, x, y));
    let u = model.expand_score(&s, x);
    match moments {
        None => u.into_iter().map(|v| -v).collect(),
        Some(m) => {
            let a = alpha.value();
            let w = (a * s.log_f).exp();
            let integral = m.score_integral(model, x);
            integral
                .iter()
                .zip(&u)
                .map(|(i, ui)| (1.0 + a) * (i - ui * w))
                .collect()
        }
    }
}

/// `∂H_α/∂θ`: `(1+α)[∫U_θ f^{1+α} − U_θ(y|x) f^α(y|x)]` for `α > 0`,
/// `−U_θ(y|x)` at `α = 0`.
pub fn h_alpha_gradient(
    model: &SfModel,
    theta: &Theta,
    x: &[f64],
    y: f64,
    alpha: Alpha,
    quad: &QuadratureConfig,
) -> Result<Vec<f64>> {
    theta.validate(model.family, &model.frontier)?;
    let dens = ResidualDensity::from_theta(model.family, theta);
    let moments = if alpha.is_zero() {
        None
    } else {
        Some(power_moments(&dens, alpha, quad)?)
    };
    Ok(h_gradient_from_parts(
        model,
        &dens,
        moments.as_ref(),
        theta,
        x,
        y,
        alpha,
    ))
}

/// Mean of `H_α` over the sample, summed left to right.
pub fn objective(
    data: &Dataset,
    model: &SfModel,
    theta: &Theta,
    alpha: Alpha,
    quad: &QuadratureConfig,
) -> Result<f64> {
    MdpdObjective::new(data, *model, alpha, *quad)?.value(theta)
}

/// Mean of `∂H_α/∂θ` over the sample.
pub fn objective_gradient(
    data: &Dataset,
    model: &SfModel,
    theta: &Theta,
    alpha: Alpha,
    quad: &QuadratureConfig,
) -> Result<Vec<f64>> {
    Ok(MdpdObjective::new(data, *model, alpha, *quad)?
        .value_and_gradient(theta)?
        .1)
}

/// The empirical divergence objective bound to a sample.
#[derive(Debug, Clone, Copy)]
pub struct MdpdObjective<'a> {
    pub data: &'a Dataset,
    pub model: SfModel,
    pub alpha: Alpha,
    pub quad: QuadratureConfig,
}

impl<'a> MdpdObjective<'a> {
    pub fn new(
        data: &'a Dataset,
        model: SfModel,
        alpha: Alpha,
        quad: QuadratureConfig,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(SfaError::DegenerateData("empty sample".into()));
        }
        if data.num_inputs() != model.frontier.num_inputs {
            return Err(SfaError::Dimension {
                expected: model.frontier.num_inputs,
                got: data.num_inputs(),
            });
        }
        Ok(Self {
            data,
            model,
            alpha,
            quad,
        })
    }

    pub fn value(&self, theta: &Theta) -> Result<f64> {
        theta.validate(self.model.family, &self.model.frontier)?;
        let dens = ResidualDensity::from_theta(self.model.family, theta);
        let integral = if self.alpha.is_zero() {
            0.0
        } else {
            residual_power_integral(&dens, self.alpha, &self.quad)?
        };
        let mut sum = 0.0;
        for i in 0..self.data.len() {
            let eps = self
                .model
                .residual(theta, self.data.inputs(i), self.data.y(i));
            sum += h_from_parts(self.alpha, integral, dens.log_density(eps));
        }
        Ok(sum / self.data.len() as f64)
    }

    pub fn value_and_gradient(&self, theta: &Theta) -> Result<(f64, Vec<f64>)> {
        theta.validate(self.model.family, &self.model.frontier)?;
        let dens = ResidualDensity::from_theta(self.model.family, theta);
        let moments = if self.alpha.is_zero() {
            None
        } else {
            Some(power_moments(&dens, self.alpha, &self.quad)?)
        };
        let a = self.alpha.value();
        let dim = self.model.dim();
        let n = self.data.len();
        let mut value = 0.0;
        // accumulate the residual-score part; the model term is added once
        let mut grad = vec![0.0; dim];
        for i in 0..n {
            let x = self.data.inputs(i);
            let s = dens.score(self.model.residual(theta, x, self.data.y(i)));
            let u = self.model.expand_score(&s, x);
            match &moments {
                None => {
                    value -= s.log_f;
                    for (g, ui) in grad.iter_mut().zip(&u) {
                        *g -= ui;
                    }
                }
                Some(m) => {
                    let w = (a * s.log_f).exp();
                    value += m.integral - (1.0 + 1.0 / a) * w;
                    let integral = m.score_integral(&self.model, x);
                    for ((g, ui), ii) in grad.iter_mut().zip(&u).zip(&integral) {
                        *g += (1.0 + a) * (ii - ui * w);
                    }
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv_n);
        Ok((value * inv_n, grad))
    }

    /// Per-observation gradients `∂H_α(X_i, Y_i; θ)/∂θ`.
    pub fn observation_gradients(&self, theta: &Theta) -> Result<Vec<Vec<f64>>> {
        theta.validate(self.model.family, &self.model.frontier)?;
        let dens = ResidualDensity::from_theta(self.model.family, theta);
        let moments = if self.alpha.is_zero() {
            None
        } else {
            Some(power_moments(&dens, self.alpha, &self.quad)?)
        };
        Ok((0..self.data.len())
            .map(|i| {
                h_gradient_from_parts(
                    &self.model,
                    &dens,
                    moments.as_ref(),
                    theta,
                    self.data.inputs(i),
                    self.data.y(i),
                    self.alpha,
                )
            })
            .collect())
    }
}

/// Hessian `J` and score covariance `K` of the mean objective at `θ̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct JkMatrices {
    pub j: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

/// `J` from central differences of the analytic gradient (step
/// `1e-4·max(1, |θ_j|)`, then symmetrized); `K` the sample covariance of the
/// per-observation gradients. `θ̂` should be a stationary point.
pub fn jk_matrices(
    data: &Dataset,
    model: &SfModel,
    theta_hat: &Theta,
    alpha: Alpha,
    quad: &QuadratureConfig,
) -> Result<JkMatrices> {
    let obj = MdpdObjective::new(data, *model, alpha, *quad)?;
    let center = theta_hat.to_vec();
    let q = theta_hat.beta.len();
    let dim = center.len();
    let mut j = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let h = 1e-4 * center[c].abs().max(1.0);
        let mut up = center.clone();
        let mut dn = center.clone();
        up[c] += h;
        dn[c] -= h;
        let gu = obj
            .value_and_gradient(&Theta::from_vec(model.family, q, &up)?)?
            .1;
        let gd = obj
            .value_and_gradient(&Theta::from_vec(model.family, q, &dn)?)?
            .1;
        for r in 0..dim {
            j[(r, c)] = (gu[r] - gd[r]) / (2.0 * h);
        }
    }
    let j = 0.5 * (&j + j.transpose());
    if j.iter().any(|v| !v.is_finite()) || j.clone().cholesky().is_none() {
        return Err(SfaError::SingularInformation);
    }

    let grads = obj.observation_gradients(theta_hat)?;
    let n = grads.len() as f64;
    let mut mean = DVector::zeros(dim);
    for g in &grads {
        mean += DVector::from_column_slice(g);
    }
    mean /= n;
    let mut k = DMatrix::zeros(dim, dim);
    for g in &grads {
        let d = DVector::from_column_slice(g) - &mean;
        k += &d * d.transpose();
    }
    k /= n;
    Ok(JkMatrices { j, k })
}
