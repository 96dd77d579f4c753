//! Minimum density power divergence fitting.
//!
//! The optimizer works in unconstrained coordinates: `β` and `μ` as they
//! are, and `ln(σ − σ_floor)` for both scales, so every iterate respects the
//! floor. Fits start from corrected OLS, fall back to a simplex search when
//! the quasi-Newton line search breaks down, and retry from jittered starts
//! when a start does not converge.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SfaError};
use crate::model::{FrontierSpec, PseudoFamily, SfModel, Theta, SIGMA_FLOOR};
use crate::objective::{jk_matrices, Alpha, MdpdObjective};
use crate::optim::{bfgs, nelder_mead, norm, Status};
use crate::quadrature::QuadratureConfig;
use crate::stats::RngStream;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub num_restarts: usize,
    pub alpha_path: Vec<Alpha>,
    pub seed: u64,
    pub quadrature: QuadratureConfig,
    /// Compute `J`, `K` and the sandwich covariance after convergence.
    pub covariance: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iters: 500,
            num_restarts: 3,
            alpha_path: vec![Alpha::ZERO],
            seed: 0,
            quadrature: QuadratureConfig::default(),
            covariance: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(SfaError::Invalid("grad_tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(SfaError::Invalid("max_iters must be positive".into()));
        }
        if self
            .alpha_path
            .windows(2)
            .any(|w| w[1].value() < w[0].value())
        {
            return Err(SfaError::Invalid("alpha path must be ascending".into()));
        }
        self.quadrature.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: SfModel,
    pub theta_hat: Theta,
    pub alpha: Alpha,
    pub objective_value: f64,
    /// Gradient norm in the optimizer's coordinates.
    pub gradient_norm: f64,
    /// Sandwich covariance `J⁻¹KJ⁻¹/n` in the `(β, μ, σ_v, σ_u)` layout.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub std_errors: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub restarts_used: usize,
    /// `γ̂ ≤ 0.05` or `σ̂_u` at the floor.
    pub boundary: bool,
    pub n: usize,
}

impl FitResult {
    /// Standard errors of `σ² = σ_v² + σ_u²` and `γ = σ_u/σ_v` by the delta
    /// method.
    pub fn derived_std_errors(&self) -> Option<(f64, f64)> {
        let cov = self.covariance.as_ref()?;
        let d = cov.len();
        let (iv, iu) = (d - 2, d - 1);
        let (sv, su) = (self.theta_hat.sigma_v, self.theta_hat.sigma_u);
        let grad_s2 = [2.0 * sv, 2.0 * su];
        let grad_g = [-su / (sv * sv), 1.0 / sv];
        let quad = |g: &[f64; 2]| {
            let idx = [iv, iu];
            let mut v = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    v += g[a] * cov[idx[a]][idx[b]] * g[b];
                }
            }
            v.max(0.0).sqrt()
        };
        Some((quad(&grad_s2), quad(&grad_g)))
    }
}

fn to_free(theta: &Theta) -> Vec<f64> {
    let mut z = theta.beta.clone();
    if let Some(mu) = theta.mu {
        z.push(mu);
    }
    z.push((theta.sigma_v - SIGMA_FLOOR).max(1e-300).ln());
    z.push((theta.sigma_u - SIGMA_FLOOR).max(1e-300).ln());
    z
}

fn from_free(model: &SfModel, z: &[f64]) -> Theta {
    let q = model.frontier.num_coefficients();
    let beta = z[..q].to_vec();
    let (mu, rest) = if model.family.has_mu() {
        (Some(z[q]), &z[q + 1..])
    } else {
        (None, &z[q..])
    };
    Theta::new(
        beta,
        mu,
        SIGMA_FLOOR + rest[0].exp(),
        SIGMA_FLOOR + rest[1].exp(),
    )
}

/// Ordinary least squares `β = (X̃ᵀX̃)⁻¹X̃ᵀy` and its residuals.
pub fn ols(data: &Dataset, frontier: &FrontierSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = data.len();
    let q = frontier.num_coefficients();
    let mut xtx = DMatrix::<f64>::zeros(q, q);
    let mut xty = DVector::<f64>::zeros(q);
    for i in 0..n {
        let row = DVector::from_vec(frontier.design_row(data.inputs(i)));
        xtx += &row * row.transpose();
        xty += &row * data.y(i);
    }
    // scale-aware rank check on the normal equations
    let svd = xtx.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(SfaError::DesignMatrix);
    }
    let beta = xtx.cholesky().ok_or(SfaError::DesignMatrix)?.solve(&xty);
    let beta: Vec<f64> = beta.iter().copied().collect();
    let resid = (0..n)
        .map(|i| data.y(i) - frontier.eval(&beta, data.inputs(i)))
        .collect();
    Ok((beta, resid))
}

/// Corrected OLS start: OLS slopes, scales from the second and third central
/// moments of the residuals, intercept shifted up by the implied `E[U]`.
pub fn initialize(data: &Dataset, model: &SfModel) -> Result<Theta> {
    let q = model.frontier.num_coefficients();
    if data.len() <= q + 2 {
        return Err(SfaError::DegenerateData(format!(
            "need more than {} observations, got {}",
            q + 2,
            data.len()
        )));
    }
    let (mut beta, resid) = ols(data, &model.frontier)?;
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let m2 = resid.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let m3 = resid.iter().map(|e| (e - mean).powi(3)).sum::<f64>() / n;

    // third moment of −U: NH −√(2/π)(4/π − 1)σ_u³, NE −2σ_u³
    let (mut su2, var_factor, mean_factor) = match model.family {
        PseudoFamily::Nh | PseudoFamily::Nt => {
            let c = SQRT_2_OVER_PI * (4.0 / std::f64::consts::PI - 1.0);
            let su = if m3 < 0.0 { (-m3 / c).cbrt() } else { 0.0 };
            (su * su, 1.0 - 2.0 / std::f64::consts::PI, SQRT_2_OVER_PI)
        }
        PseudoFamily::Ne => {
            let su = if m3 < 0.0 { (-m3 / 2.0).cbrt() } else { 0.0 };
            (su * su, 1.0, 1.0)
        }
    };
    // keep some of the variance for the noise when the skew overshoots
    if var_factor * su2 > 0.95 * m2 {
        su2 = 0.95 * m2 / var_factor;
    }
    let sv2 = m2 - var_factor * su2;
    let sigma_u = su2.sqrt().max(SIGMA_FLOOR);
    let sigma_v = sv2.max(0.0).sqrt().max(SIGMA_FLOOR);
    if model.frontier.has_intercept {
        beta[0] += mean_factor * sigma_u;
    }
    let mu = model.family.has_mu().then_some(0.0);
    Ok(Theta::new(beta, mu, sigma_v, sigma_u))
}

struct Attempt {
    theta: Theta,
    value: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

fn optimize_from(obj: &MdpdObjective<'_>, start: &Theta, opts: &FitOptions) -> Attempt {
    let model = obj.model;
    let eval = |z: &[f64]| -> Option<(f64, Vec<f64>)> {
        let theta = from_free(&model, z);
        let (v, g) = obj.value_and_gradient(&theta).ok()?;
        Some((v, chain_rule(&model, &theta, g)))
    };

    let mut z = to_free(start);
    let mut iterations = 0;
    let mut last = None;
    // BFGS, and on a line-search breakdown one simplex pass before resuming
    for round in 0..3 {
        let m = bfgs(
            eval,
            &z,
            opts.grad_tol,
            opts.max_iters.saturating_sub(iterations).max(1),
        );
        iterations += m.iterations;
        let status = m.status;
        z = m.x.clone();
        last = Some(m);
        match status {
            Status::Converged | Status::BadStart | Status::MaxIterations => break,
            Status::LineSearchFailed if round < 2 => {
                let (zn, _) =
                    nelder_mead(|z| eval(z).map(|(v, _)| v), &z, 0.05, 200 * z.len(), 1e-13);
                z = zn;
            }
            Status::LineSearchFailed => break,
        }
    }
    let m = last.expect("at least one round");
    let theta = from_free(&model, &m.x);
    let grad_norm = norm(&m.gradient);
    Attempt {
        theta,
        value: m.value,
        grad_norm,
        iterations,
        converged: m.status == Status::Converged,
    }
}

/// Map `∂/∂θ` to `∂/∂z` with `σ = σ_floor + e^z`.
fn chain_rule(model: &SfModel, theta: &Theta, mut g: Vec<f64>) -> Vec<f64> {
    let d = g.len();
    let _ = model;
    g[d - 2] *= theta.sigma_v - SIGMA_FLOOR;
    g[d - 1] *= theta.sigma_u - SIGMA_FLOOR;
    g
}

fn jitter(theta: &Theta, rng: &mut RngStream) -> Theta {
    let mult = |r: &mut RngStream| (0.2 * r.standard_normal()).exp();
    let beta = theta.beta.iter().map(|b| b * mult(rng)).collect();
    let sv = (theta.sigma_v * mult(rng)).max(2.0 * SIGMA_FLOOR);
    let su = (theta.sigma_u * mult(rng)).max(2.0 * SIGMA_FLOOR);
    let mu = theta
        .mu
        .map(|m| m * mult(rng) + 0.2 * theta.sigma_u * rng.standard_normal());
    Theta::new(beta, mu, sv, su)
}

/// Lift a start off the floor so the log transform has room to move.
fn interior_start(theta: &Theta, scale: f64) -> Theta {
    let mut t = theta.clone();
    let lift = (0.1 * scale).max(10.0 * SIGMA_FLOOR);
    if t.sigma_u < lift {
        t.sigma_u = lift;
    }
    if t.sigma_v < lift {
        t.sigma_v = lift;
    }
    t
}

/// Fit the MDPD estimator at `alpha`, starting from corrected OLS.
pub fn fit_mdpd(
    data: &Dataset,
    family: PseudoFamily,
    alpha: Alpha,
    options: &FitOptions,
) -> Result<FitResult> {
    let model = SfModel::new(family, FrontierSpec::new(data.num_inputs()));
    let start = initialize(data, &model)?;
    fit_from(data, &model, alpha, &start, options)
}

/// Fit from an explicit start; the warm-start entry point.
pub fn fit_from(
    data: &Dataset,
    model: &SfModel,
    alpha: Alpha,
    start: &Theta,
    options: &FitOptions,
) -> Result<FitResult> {
    options.validate()?;
    start.validate(model.family, &model.frontier)?;
    let obj = MdpdObjective::new(data, *model, alpha, options.quadrature)?;
    let scale = start.sigma2().sqrt();

    let mut rng = RngStream::new(options.seed, 0x5eed_0000);
    let mut best: Option<Attempt> = None;
    let mut restarts_used = 0;
    for attempt in 0..=options.num_restarts {
        let from = if attempt == 0 {
            // a start already at a stationary point is kept as is
            let probe = optimize_probe(&obj, start, options);
            if probe {
                start.clone()
            } else {
                interior_start(start, scale)
            }
        } else {
            restarts_used += 1;
            jitter(&interior_start(start, scale), &mut rng)
        };
        let a = optimize_from(&obj, &from, options);
        let better = match &best {
            None => true,
            Some(b) => {
                if a.converged != b.converged {
                    a.converged
                } else if (a.value - b.value).abs() <= 1e-10 {
                    a.grad_norm < b.grad_norm
                } else {
                    a.value < b.value
                }
            }
        };
        if better {
            best = Some(a);
        }
        if best.as_ref().is_some_and(|b| b.converged) {
            break;
        }
    }
    let best = best.expect("at least one attempt");
    let theta_hat = best.theta;
    let boundary = theta_hat.gamma() <= 0.05 || theta_hat.sigma_u <= 1.01 * SIGMA_FLOOR;

    let (covariance, std_errors) = if best.converged && options.covariance {
        match sandwich(data, model, &theta_hat, alpha, &options.quadrature) {
            Ok(c) => {
                let se = (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect();
                let rows = (0..c.nrows())
                    .map(|i| c.row(i).iter().copied().collect())
                    .collect();
                (Some(rows), Some(se))
            }
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };

    Ok(FitResult {
        model: *model,
        theta_hat,
        alpha,
        objective_value: best.value,
        gradient_norm: best.grad_norm,
        covariance,
        std_errors,
        converged: best.converged,
        iterations: best.iterations,
        restarts_used,
        boundary,
        n: data.len(),
    })
}

fn optimize_probe(obj: &MdpdObjective<'_>, start: &Theta, opts: &FitOptions) -> bool {
    obj.value_and_gradient(start)
        .map(|(v, g)| norm(&chain_rule(&obj.model, start, g)) <= opts.grad_tol * (1.0 + v.abs()))
        .unwrap_or(false)
}

/// `J⁻¹ K J⁻¹ / n`.
pub fn sandwich(
    data: &Dataset,
    model: &SfModel,
    theta: &Theta,
    alpha: Alpha,
    quad: &QuadratureConfig,
) -> Result<DMatrix<f64>> {
    let jk = jk_matrices(data, model, theta, alpha, quad)?;
    let j_inv =
        jk.j.clone()
            .cholesky()
            .ok_or(SfaError::SingularInformation)?
            .inverse();
    let c = &j_inv * &jk.k * &j_inv / data.len() as f64;
    Ok(0.5 * (&c + c.transpose()))
}

/// Fit every α of `options.alpha_path` in order, each warm-started from the
/// previous solution.
pub fn fit_alpha_path(
    data: &Dataset,
    family: PseudoFamily,
    options: &FitOptions,
) -> Result<Vec<FitResult>> {
    options.validate()?;
    let model = SfModel::new(family, FrontierSpec::new(data.num_inputs()));
    let mut start = initialize(data, &model)?;
    let mut out = Vec::with_capacity(options.alpha_path.len());
    for &alpha in &options.alpha_path {
        let r = fit_from(data, &model, alpha, &start, options)?;
        if r.converged {
            start = r.theta_hat.clone();
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::sample_half_normal;

    fn simulate(n: usize, sv: f64, su: f64, seed: u64) -> Dataset {
        let mut r = RngStream::new(seed, 0);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi = r.uniform();
            let v = sv * r.standard_normal();
            let u = if su > 0.0 {
                sample_half_normal(su, &mut r).unwrap()
            } else {
                0.0
            };
            x.push(xi);
            y.push(5.0 + 5.0 * xi + v - u);
        }
        Dataset::single_input(x, y).unwrap()
    }

    #[test]
    fn free_coordinates_round_trip() {
        let m = SfModel::new(PseudoFamily::Nt, FrontierSpec::new(2));
        let th = Theta::new(vec![1.0, -2.0, 0.5], Some(0.3), 0.7, 1.3);
        let back = from_free(&m, &to_free(&th));
        for (a, b) in th.to_vec().iter().zip(back.to_vec()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn ols_recovers_noiseless_frontier() {
        let mut r = RngStream::new(2, 0);
        let x: Vec<f64> = (0..50).map(|_| r.uniform()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|xi| 2.0 + 3.0 * xi + 1e-6 * r.standard_normal())
            .collect();
        let d = Dataset::single_input(x, y).unwrap();
        let m = SfModel::new(PseudoFamily::Nh, FrontierSpec::new(1));
        let th = initialize(&d, &m).unwrap();
        assert!((th.beta[0] - 2.0).abs() < 1e-3 && (th.beta[1] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn symmetric_residuals_hit_the_floor() {
        // no inefficiency and a positive third moment
        let mut r = RngStream::new(9, 0);
        let x: Vec<f64> = (0..400).map(|_| r.uniform()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|xi| 1.0 + xi + sample_half_normal(0.5, &mut r).unwrap())
            .collect();
        let d = Dataset::single_input(x, y).unwrap();
        let m = SfModel::new(PseudoFamily::Nh, FrontierSpec::new(1));
        assert_eq!(initialize(&d, &m).unwrap().sigma_u, SIGMA_FLOOR);
    }

    #[test]
    fn rank_deficient_design() {
        let d = Dataset::single_input(vec![1.0; 10], (0..10).map(f64::from).collect()).unwrap();
        let m = SfModel::new(PseudoFamily::Nh, FrontierSpec::new(1));
        assert_eq!(initialize(&d, &m), Err(SfaError::DesignMatrix));
        let tiny = Dataset::single_input(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            initialize(&tiny, &m),
            Err(SfaError::DegenerateData(_))
        ));
    }

    #[test]
    fn fit_converges_and_is_a_fixed_point() {
        let d = simulate(500, 0.75f64.sqrt(), 1.0, 4);
        for alpha in [0.0, 0.3] {
            let opts = FitOptions::default();
            let a = Alpha::new(alpha).unwrap();
            let r = fit_mdpd(&d, PseudoFamily::Nh, a, &opts).unwrap();
            assert!(r.converged, "alpha {alpha}: {r:?}");
            assert!(r.gradient_norm <= opts.grad_tol * (1.0 + r.objective_value.abs()));
            let m = r.model;
            let init = initialize(&d, &m).unwrap();
            let obj = MdpdObjective::new(&d, m, a, opts.quadrature).unwrap();
            assert!(r.objective_value <= obj.value(&init).unwrap());
            let se = r.std_errors.as_ref().unwrap();
            let cov = r.covariance.as_ref().unwrap();
            for i in 0..se.len() {
                assert_eq!(se[i], cov[i][i].sqrt());
            }
            let again = fit_from(&d, &m, a, &r.theta_hat, &opts).unwrap();
            for (p, q) in again.theta_hat.to_vec().iter().zip(r.theta_hat.to_vec()) {
                assert!((p - q).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn intercept_shifts_with_output() {
        let d = simulate(300, 0.8, 0.9, 12);
        let shifted = d
            .with_output(d.output().iter().map(|y| y + 3.0).collect())
            .unwrap();
        let opts = FitOptions::default();
        let a = Alpha::new(0.2).unwrap();
        let r1 = fit_mdpd(&d, PseudoFamily::Nh, a, &opts).unwrap();
        let r2 = fit_mdpd(&shifted, PseudoFamily::Nh, a, &opts).unwrap();
        assert!((r2.theta_hat.beta[0] - r1.theta_hat.beta[0] - 3.0).abs() < 1e-6);
        assert!((r2.theta_hat.beta[1] - r1.theta_hat.beta[1]).abs() < 1e-6);
    }

    #[test]
    fn boundary_flag_on_symmetric_noise() {
        // residuals skewed the wrong way: the likelihood peaks at σ_u = 0
        let d = simulate(400, 1.0, 0.0, 21);
        let flipped: Vec<f64> = d
            .output()
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let mut r = RngStream::new(21, 1 + i as u64);
                y + sample_half_normal(2.0, &mut r).unwrap()
            })
            .collect();
        let d = d.with_output(flipped).unwrap();
        let r = fit_mdpd(&d, PseudoFamily::Nh, Alpha::ZERO, &FitOptions::default()).unwrap();
        assert_eq!(initialize(&d, &r.model).unwrap().sigma_u, SIGMA_FLOOR);
        assert!(r.boundary, "{:?}", r.theta_hat);
    }

    #[test]
    fn singleton_path_matches_direct_fit() {
        let d = simulate(200, 0.8, 1.0, 8);
        let opts = FitOptions {
            alpha_path: vec![Alpha::new(0.1).unwrap()],
            ..Default::default()
        };
        let path = fit_alpha_path(&d, PseudoFamily::Nh, &opts).unwrap();
        let direct = fit_mdpd(&d, PseudoFamily::Nh, Alpha::new(0.1).unwrap(), &opts).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path[0], direct);
    }

    #[test]
    fn path_must_ascend() {
        let d = simulate(100, 0.8, 1.0, 8);
        let opts = FitOptions {
            alpha_path: vec![Alpha::new(0.3).unwrap(), Alpha::new(0.1).unwrap()],
            ..Default::default()
        };
        assert!(fit_alpha_path(&d, PseudoFamily::Nh, &opts).is_err());
    }
}
