//! Influence diagnostics, contamination generators, accuracy metrics and the
//! Monte Carlo experiment driver.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::efficiency::{mse_te, technical_efficiency};
use crate::error::{Result, SfaError};
use crate::fit::{fit_mdpd, FitOptions, FitResult};
use crate::model::{PseudoFamily, Theta};
use crate::objective::{h_alpha_gradient, jk_matrices, Alpha};
use crate::quadrature::QuadratureConfig;
use crate::stats::{sample_half_normal, sample_truncated_normal, RngStream};

/// Largest share of failed fits a simulation tolerates per estimator.
pub const MAX_FAILURE_RATE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Contamination {
    None,
    /// `n_o` rows moved onto the frontier plus `p_v·σ_v`.
    Upward {
        n_o: usize,
        p_v: f64,
    },
    /// `n_o` rows replaced by `X ~ U(0,1)`, `Y ~ U(0.5, 1)`.
    Downward {
        n_o: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub replications: usize,
    pub family: PseudoFamily,
    /// Data-generating parameters; one input drawn from `U(0,1)`.
    pub truth: Theta,
    pub contamination: Contamination,
    pub alpha_list: Vec<Alpha>,
    pub seed: u64,
    pub fit: FitOptions,
}

impl SimConfig {
    /// The clean design `Y = 5 + 5X + V − U`, `σ_v² = 0.75`, `σ_u² = 1`,
    /// `n = 500`, 200 replications.
    pub fn table_design(contamination: Contamination, alpha_list: Vec<Alpha>, seed: u64) -> Self {
        Self {
            n: 500,
            replications: 200,
            family: PseudoFamily::Nh,
            truth: Theta::from_variances(vec![5.0, 5.0], 0.75, 1.0),
            contamination,
            alpha_list,
            seed,
            fit: FitOptions {
                covariance: false,
                ..FitOptions::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(SfaError::Invalid("replications must be at least 1".into()));
        }
        if self.truth.beta.len() != 2 {
            return Err(SfaError::Invalid(
                "simulation frontier has an intercept and one input".into(),
            ));
        }
        self.truth
            .validate(self.family, &crate::model::FrontierSpec::new(1))?;
        let n_o = match self.contamination {
            Contamination::None => 0,
            Contamination::Upward { n_o, .. } | Contamination::Downward { n_o } => n_o,
        };
        if n_o >= self.n {
            return Err(SfaError::Invalid("n_o must be below n".into()));
        }
        if self.alpha_list.is_empty() {
            return Err(SfaError::Invalid("alpha list is empty".into()));
        }
        if !self.alpha_list[0].is_zero() {
            return Err(SfaError::Invalid(
                "alpha list must start with the ML estimator (alpha = 0)".into(),
            ));
        }
        Ok(())
    }
}

/// A clean sample from the configured model, with the drawn `U` recorded.
pub fn generate_clean(config: &SimConfig, rng: &mut RngStream) -> Result<Dataset> {
    let th = &config.truth;
    let mut x = Vec::with_capacity(config.n);
    let mut y = Vec::with_capacity(config.n);
    let mut true_u = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let xi = rng.uniform();
        let v = th.sigma_v * rng.standard_normal();
        let u = match config.family {
            PseudoFamily::Nh => sample_half_normal(th.sigma_u, rng)?,
            PseudoFamily::Nt => sample_truncated_normal(th.mu_or_zero(), th.sigma_u, rng)?,
            PseudoFamily::Ne => -th.sigma_u * (1.0 - rng.uniform()).ln(),
        };
        x.push(xi);
        y.push(th.beta[0] + th.beta[1] * xi + v - u);
        true_u.push(Some(u));
    }
    Dataset::single_input(x, y)?.with_true_u(true_u)
}

/// `k` distinct row indices, uniformly without replacement (partial
/// Fisher–Yates).
fn choose_rows(n: usize, k: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.index(n - i);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

fn check_outliers(data: &Dataset, n_o: usize) -> Result<()> {
    if n_o > data.len() {
        return Err(SfaError::Invalid(format!(
            "cannot replace {n_o} of {} rows",
            data.len()
        )));
    }
    Ok(())
}

/// Move `n_o` random rows onto `β₀ + β₁X + p_v·σ_v` with zero inefficiency.
pub fn contaminate_upward(
    data: &Dataset,
    n_o: usize,
    p_v: f64,
    truth: &Theta,
    rng: &mut RngStream,
) -> Result<Dataset> {
    check_outliers(data, n_o)?;
    let mut out = data.clone();
    for i in choose_rows(data.len(), n_o, rng) {
        let x = data.inputs(i).to_vec();
        let y = truth.beta[0]
            + truth.beta[1..]
                .iter()
                .zip(&x)
                .map(|(b, x)| b * x)
                .sum::<f64>()
            + p_v * truth.sigma_v;
        out.replace_row(i, &x, y, Some(0.0));
    }
    Ok(out)
}

/// Replace `n_o` random rows by `X ~ U(0,1)`, `Y ~ U(0.5, 1)`; their true
/// inefficiency is marked unknown.
pub fn contaminate_downward(data: &Dataset, n_o: usize, rng: &mut RngStream) -> Result<Dataset> {
    check_outliers(data, n_o)?;
    let mut out = data.clone();
    for i in choose_rows(data.len(), n_o, rng) {
        let x: Vec<f64> = (0..data.num_inputs()).map(|_| rng.uniform()).collect();
        let y = rng.uniform_range(0.5, 1.0);
        out.replace_row(i, &x, y, None);
    }
    Ok(out)
}

/// Raw firm-level quantities behind the skewed-firms preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmLevels {
    pub capital: Vec<f64>,
    pub labor: Vec<f64>,
    pub value_added: Vec<f64>,
}

/// Synthetic firm sample with heavily right-skewed levels: log-normal
/// employment and capital intensity, and a Cobb–Douglas frontier in per
/// employee logs, `ln(Y/L) = 1 + 0.35·ln(K/L) + V − U` with `σ_v = 0.3`,
/// half-normal `σ_u = 0.6`. The returned dataset holds `y = ln(Y/L)` and
/// `x1 = ln(K/L)`. Purely illustrative.
pub fn skewed_firms(n: usize, rng: &mut RngStream) -> Result<(Dataset, FirmLevels)> {
    let mut levels = FirmLevels {
        capital: Vec::with_capacity(n),
        labor: Vec::with_capacity(n),
        value_added: Vec::with_capacity(n),
    };
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut true_u = Vec::with_capacity(n);
    for _ in 0..n {
        let ln_l = 3.0 + 1.6 * rng.standard_normal();
        let ln_kl = 4.0 + rng.standard_normal();
        let u = sample_half_normal(0.6, rng)?;
        let ln_yl = 1.0 + 0.35 * ln_kl + 0.3 * rng.standard_normal() - u;
        levels.labor.push(ln_l.exp());
        levels.capital.push((ln_kl + ln_l).exp());
        levels.value_added.push((ln_yl + ln_l).exp());
        x.push(ln_kl);
        y.push(ln_yl);
        true_u.push(Some(u));
    }
    let data = Dataset::single_input(x, y)?.with_true_u(true_u)?;
    Ok((data, levels))
}

/// Sample skewness `m₃ / m₂^{3/2}`.
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Parameters compared by [`metric_d`]: `(β…, σ_v², σ_u²)`.
fn d_components(theta: &Theta) -> Vec<f64> {
    let mut v = theta.beta.clone();
    v.push(theta.sigma_v2());
    v.push(theta.sigma_u2());
    v
}

/// Root of the summed squared relative errors of `(β…, σ_v², σ_u²)`.
pub fn metric_d(theta_hat: &Theta, truth: &Theta) -> Result<f64> {
    let (a, b) = (d_components(theta_hat), d_components(truth));
    if a.len() != b.len() {
        return Err(SfaError::Dimension {
            expected: b.len(),
            got: a.len(),
        });
    }
    let mut s = 0.0;
    for (est, tru) in a.iter().zip(&b) {
        if *tru == 0.0 {
            return Err(SfaError::UndefinedMetric("a true component is zero".into()));
        }
        s += ((est - tru) / tru).powi(2);
    }
    Ok(s.sqrt())
}

/// Empirical influence function `−J⁻¹ ∂H_α(x₀, y₀; θ̂)/∂θ` along a grid of
/// outputs at input `x0`, with `J` estimated from the fitting sample. One row
/// per grid point, in the `(β, μ, σ_v, σ_u)` layout.
pub fn influence_curve(
    fit: &FitResult,
    data: &Dataset,
    x0: &[f64],
    y0_grid: &[f64],
    quad: &QuadratureConfig,
) -> Result<Vec<Vec<f64>>> {
    if !fit.converged {
        return Err(SfaError::NonConvergence(
            "influence curve needs a converged fit".into(),
        ));
    }
    if x0.len() != fit.model.frontier.num_inputs {
        return Err(SfaError::Dimension {
            expected: fit.model.frontier.num_inputs,
            got: x0.len(),
        });
    }
    let jk = jk_matrices(data, &fit.model, &fit.theta_hat, fit.alpha, quad)?;
    let chol = jk.j.cholesky().ok_or(SfaError::SingularInformation)?;
    y0_grid
        .iter()
        .map(|&y0| {
            let g = h_alpha_gradient(&fit.model, &fit.theta_hat, x0, y0, fit.alpha, quad)?;
            let sol = chol.solve(&DVector::from_vec(g));
            Ok(sol.iter().map(|v| -v).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub alpha: Alpha,
    pub params: Vec<ParamSummary>,
    pub mean_d: f64,
    /// `mean_d` over the ML estimator's `mean_d`.
    pub ratio_d: f64,
    pub mse_te: f64,
    /// Replications in the summary.
    pub used: usize,
    pub failures: usize,
}

impl EstimatorSummary {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub estimators: Vec<EstimatorSummary>,
    /// RNG stream of replication `r` is `(seed, r)`.
    pub seed: u64,
    /// Wall-clock time; not serialized so reports stay byte-stable.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl SimReport {
    pub fn estimator(&self, alpha: f64) -> Option<&EstimatorSummary> {
        self.estimators
            .iter()
            .find(|e| (e.alpha.value() - alpha).abs() < 1e-12)
    }
}

/// Parameter columns reported per estimator, in table order.
pub const PARAM_NAMES: [&str; 6] = ["beta0", "beta1", "sigma_v2", "sigma_u2", "sigma2", "gamma"];

fn param_values(theta: &Theta) -> [f64; 6] {
    [
        theta.beta[0],
        theta.beta[1],
        theta.sigma_v2(),
        theta.sigma_u2(),
        theta.sigma2(),
        theta.gamma(),
    ]
}

/// Per-replication outcome for one estimator.
#[derive(Debug, Clone)]
struct RepFit {
    params: [f64; 6],
    d: f64,
    mse_te: f64,
}

fn one_replication(config: &SimConfig, rep: usize) -> Result<Vec<Option<RepFit>>> {
    let mut rng = RngStream::new(config.seed, rep as u64);
    let clean = generate_clean(config, &mut rng)?;
    let data = match config.contamination {
        Contamination::None => clean,
        Contamination::Upward { n_o, p_v } => {
            contaminate_upward(&clean, n_o, p_v, &config.truth, &mut rng)?
        }
        Contamination::Downward { n_o } => contaminate_downward(&clean, n_o, &mut rng)?,
    };
    let truth_u = data.true_u().expect("simulated data records U").to_vec();
    let opts = FitOptions {
        seed: config.seed.wrapping_add(rep as u64),
        ..config.fit.clone()
    };
    config
        .alpha_list
        .iter()
        .map(|&alpha| {
            let fit = match fit_mdpd(&data, config.family, alpha, &opts) {
                Ok(f) if f.converged => f,
                Ok(_) | Err(SfaError::NonConvergence(_)) | Err(SfaError::Quadrature { .. }) => {
                    return Ok(None)
                }
                Err(e) => return Err(e),
            };
            let te = technical_efficiency(&fit, &data)?;
            Ok(Some(RepFit {
                params: param_values(&fit.theta_hat),
                d: metric_d(&fit.theta_hat, &config.truth)?,
                mse_te: mse_te(&te, &truth_u)?,
            }))
        })
        .collect()
}

/// Run the experiment: every replication draws a sample on its own stream,
/// contaminates it, fits every α and scores the efficiencies. Replications
/// run in parallel; the summary is gathered in replication order, so the
/// report depends only on the configuration.
pub fn run_simulation(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let start = std::time::Instant::now();
    let reps: Vec<Result<Vec<Option<RepFit>>>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| one_replication(config, rep))
        .collect();
    let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;

    let truth = param_values(&config.truth);
    let mut estimators = Vec::with_capacity(config.alpha_list.len());
    for (k, &alpha) in config.alpha_list.iter().enumerate() {
        let fits: Vec<&RepFit> = reps.iter().filter_map(|r| r[k].as_ref()).collect();
        let failures = config.replications - fits.len();
        if failures as f64 > MAX_FAILURE_RATE * config.replications as f64 {
            return Err(SfaError::NonConvergence(format!(
                "{failures} of {} fits failed at alpha {}",
                config.replications,
                alpha.value()
            )));
        }
        if fits.is_empty() {
            return Err(SfaError::NonConvergence("no fit converged".into()));
        }
        let used = fits.len() as f64;
        let params = PARAM_NAMES
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let vals: Vec<f64> = fits.iter().map(|f| f.params[j]).collect();
                let mean = vals.iter().sum::<f64>() / used;
                let sd = if vals.len() > 1 {
                    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (used - 1.0)).sqrt()
                } else {
                    0.0
                };
                let mse = vals.iter().map(|v| (v - truth[j]).powi(2)).sum::<f64>() / used;
                ParamSummary {
                    name: name.to_string(),
                    truth: truth[j],
                    mean,
                    sd,
                    mse,
                }
            })
            .collect();
        estimators.push(EstimatorSummary {
            alpha,
            params,
            mean_d: fits.iter().map(|f| f.d).sum::<f64>() / used,
            ratio_d: 0.0,
            mse_te: fits.iter().map(|f| f.mse_te).sum::<f64>() / used,
            used: fits.len(),
            failures,
        });
    }
    let base = estimators[0].mean_d;
    for e in &mut estimators {
        e.ratio_d = e.mean_d / base;
    }
    Ok(SimReport {
        config: config.clone(),
        estimators,
        seed: config.seed,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
