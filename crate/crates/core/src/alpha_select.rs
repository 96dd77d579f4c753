//! Choosing the robustness parameter α: the area-between-frontiers
//! similarity index and a parametric-bootstrap Monte Carlo significance test.
//!
//! The selection walks an ascending α grid and returns the smallest α whose
//! fitted frontier cannot be told apart from the most robust fit at `α*`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SfaError};
use crate::fit::{fit_alpha_path, fit_from, FitOptions, FitResult};
use crate::model::{FrontierSpec, PseudoFamily, Theta};
use crate::objective::Alpha;
use crate::stats::{sample_half_normal, sample_truncated_normal, RngStream};

/// Redraws allowed per bootstrap replicate when a refit fails.
pub const MAX_REDRAWS: usize = 3;

/// Grid points per input dimension used for the region integral.
fn grid_points(p: usize) -> usize {
    match p {
        1 => 2001,
        2 => 201,
        // keep the tensor grid near 10⁶ cells
        _ => ((1e6f64).powf(1.0 / p as f64).floor() as usize).max(5),
    }
}

/// Input ranges plus the low and high ends of the output range.
type Bounds = (Vec<(f64, f64)>, f64, f64);

/// Bounding box `C` of a sample: input ranges and the observed output range.
fn bounding_box(data: &Dataset) -> Result<Bounds> {
    if data.is_empty() {
        return Err(SfaError::DegenerateData("empty sample".into()));
    }
    let ys = data.output();
    let ymin = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(ymax > ymin) {
        return Err(SfaError::DegenerateData("output range is zero".into()));
    }
    let ranges = (0..data.num_inputs())
        .map(|j| {
            let c = data.input_column(j);
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    Ok((ranges, ymin, ymax))
}

/// Similarity of two fitted frontiers on `data`: the volume of the region
/// between the two surfaces, clipped to the bounding box `C` of the sample,
/// divided by the volume of `C`. Zero means the fits coincide.
pub fn similarity_index(data: &Dataset, fit0: &FitResult, fit1: &FitResult) -> Result<f64> {
    if fit0.model.frontier != fit1.model.frontier {
        return Err(SfaError::Invalid("fits use different frontiers".into()));
    }
    similarity_of(
        data,
        &fit0.model.frontier,
        &fit0.theta_hat.beta,
        &fit1.theta_hat.beta,
    )
}

/// [`similarity_index`] on raw coefficient vectors.
pub fn similarity_of(
    data: &Dataset,
    frontier: &FrontierSpec,
    beta0: &[f64],
    beta1: &[f64],
) -> Result<f64> {
    if data.num_inputs() != frontier.num_inputs {
        return Err(SfaError::Dimension {
            expected: frontier.num_inputs,
            got: data.num_inputs(),
        });
    }
    let (ranges, ymin, ymax) = bounding_box(data)?;
    let p = ranges.len();
    let clip = |v: f64| v.clamp(ymin, ymax);
    let gap = |x: &[f64]| (clip(frontier.eval(beta0, x)) - clip(frontier.eval(beta1, x))).abs();

    if p == 0 {
        return Ok(gap(&[]) / (ymax - ymin));
    }
    // tensor trapezoid over the normalized input box; a degenerate input
    // range contributes a single node with unit weight
    let k = grid_points(p);
    let axes: Vec<Vec<(f64, f64)>> = ranges
        .iter()
        .map(|&(lo, hi)| {
            if hi > lo {
                (0..k)
                    .map(|i| {
                        let t = i as f64 / (k - 1) as f64;
                        let w = if i == 0 || i == k - 1 { 0.5 } else { 1.0 } / (k - 1) as f64;
                        (lo + t * (hi - lo), w)
                    })
                    .collect()
            } else {
                vec![(lo, 1.0)]
            }
        })
        .collect();
    let mut idx = vec![0usize; p];
    let mut x = vec![0.0; p];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for j in 0..p {
            let (xj, wj) = axes[j][idx[j]];
            x[j] = xj;
            w *= wj;
        }
        total += w * gap(&x);
        // odometer increment
        let mut j = 0;
        loop {
            if j == p {
                return Ok((total / (ymax - ymin)).clamp(0.0, 1.0));
            }
            idx[j] += 1;
            if idx[j] < axes[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    pub alpha0: Alpha,
    pub alpha1: Alpha,
    pub sim_observed: f64,
    pub sim_bootstrap_max: f64,
    /// Bootstrap similarities in replicate order.
    pub sim_bootstrap: Vec<f64>,
    pub m: usize,
    pub accept: bool,
    pub seed: u64,
    /// Replicates that needed a fresh draw after a failed refit.
    pub redraws: usize,
}

/// One parametric-bootstrap output vector from the `T₀` fit.
fn bootstrap_sample(data: &Dataset, fit0: &FitResult, rng: &mut RngStream) -> Result<Dataset> {
    let th = &fit0.theta_hat;
    let model = &fit0.model;
    let mut y = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let v = th.sigma_v * rng.standard_normal();
        let u = match model.family {
            PseudoFamily::Nh => sample_half_normal(th.sigma_u, rng)?,
            PseudoFamily::Nt => sample_truncated_normal(th.mu_or_zero(), th.sigma_u, rng)?,
            PseudoFamily::Ne => -th.sigma_u * (1.0 - rng.uniform()).ln(),
        };
        y.push(model.frontier.eval(&th.beta, data.inputs(i)) + v - u);
    }
    data.with_output(y)
}

fn refit(data: &Dataset, fit: &FitResult, options: &FitOptions) -> Result<Theta> {
    let r = fit_from(data, &fit.model, fit.alpha, &fit.theta_hat, options)?;
    if r.converged {
        Ok(r.theta_hat)
    } else {
        Err(SfaError::NonConvergence("bootstrap refit".into()))
    }
}

/// Monte Carlo significance test of `H₀: T₀ ≈ T₁` with `m − 1` bootstrap
/// replicates. Both arms are refitted on every replicate (warm-started from
/// their fits on the original sample); `H₀` is accepted when the observed
/// similarity does not exceed the largest bootstrap similarity.
pub fn mcs_test_fits(
    data: &Dataset,
    fit0: &FitResult,
    fit1: &FitResult,
    m: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<McsResult> {
    if m < 2 {
        return Err(SfaError::Invalid("m must be at least 2".into()));
    }
    if !fit0.converged || !fit1.converged {
        return Err(SfaError::NonConvergence(
            "similarity test needs converged fits".into(),
        ));
    }
    let sim_observed = similarity_index(data, fit0, fit1)?;
    let boot_opts = FitOptions {
        covariance: false,
        ..options.clone()
    };
    let reps: Vec<Result<(f64, usize)>> = (0..m - 1)
        .into_par_iter()
        .map(|rep| {
            let mut last_err = None;
            for redraw in 0..=MAX_REDRAWS {
                let stream = seed
                    .wrapping_add(rep as u64)
                    .wrapping_add((redraw as u64) << 40);
                let mut rng = RngStream::new(seed, stream);
                let sample = bootstrap_sample(data, fit0, &mut rng)?;
                let arms = refit(&sample, fit0, &boot_opts)
                    .and_then(|t0| Ok((t0, refit(&sample, fit1, &boot_opts)?)));
                match arms.and_then(|(t0, t1)| {
                    similarity_of(&sample, &fit0.model.frontier, &t0.beta, &t1.beta)
                }) {
                    Ok(s) => return Ok((s, redraw)),
                    Err(e) => last_err = Some(e),
                }
            }
            Err(last_err.expect("at least one draw"))
        })
        .collect();
    let mut sim_bootstrap = Vec::with_capacity(m - 1);
    let mut redraws = 0;
    for r in reps {
        let (s, k) = r?;
        sim_bootstrap.push(s);
        redraws += k;
    }
    let sim_bootstrap_max = sim_bootstrap.iter().copied().fold(0.0, f64::max);
    Ok(McsResult {
        alpha0: fit0.alpha,
        alpha1: fit1.alpha,
        sim_observed,
        sim_bootstrap_max,
        sim_bootstrap,
        m,
        accept: sim_observed <= sim_bootstrap_max,
        seed,
        redraws,
    })
}

/// [`mcs_test_fits`] with the `T₁` arm fitted here at `alpha1`.
pub fn mcs_test(
    data: &Dataset,
    fit0: &FitResult,
    alpha1: Alpha,
    m: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<McsResult> {
    let fit1 = fit_from(data, &fit0.model, alpha1, &fit0.theta_hat, options)?;
    mcs_test_fits(data, fit0, &fit1, m, seed, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    /// Ascending; the test arm `α*` is its last element.
    pub alpha_grid: Vec<Alpha>,
    pub m: usize,
    pub seed: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            alpha_grid: [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5]
                .iter()
                .map(|&a| Alpha::new(a).expect("grid in range"))
                .collect(),
            m: 99,
            seed: 0,
        }
    }
}

/// α used when selection is not run or not informative.
pub const RECOMMENDED_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub alpha: Alpha,
    pub alpha_star: Alpha,
    /// No grid point passed; `alpha` is `α*`.
    pub exhausted: bool,
    /// Tests in the order they were run.
    pub tests: Vec<McsResult>,
    pub fits: Vec<FitResult>,
}

/// Step 1 tests the ML fit against `α*`; on rejection the grid is walked
/// upward and the first α whose fit passes against `α*` is returned. If
/// nothing passes, `α*` is returned with `exhausted` set.
pub fn select_alpha(
    data: &Dataset,
    family: PseudoFamily,
    config: &SelectConfig,
    options: &FitOptions,
) -> Result<Selection> {
    let grid = &config.alpha_grid;
    let Some(&alpha_star) = grid.last() else {
        return Err(SfaError::Invalid("empty alpha grid".into()));
    };
    if grid.windows(2).any(|w| w[1].value() <= w[0].value()) {
        return Err(SfaError::Invalid(
            "alpha grid must be strictly ascending".into(),
        ));
    }
    let mut path: Vec<Alpha> = vec![Alpha::ZERO];
    path.extend(grid.iter().copied().filter(|a| !a.is_zero()));
    let fits = fit_alpha_path(
        data,
        family,
        &FitOptions {
            alpha_path: path.clone(),
            covariance: false,
            ..options.clone()
        },
    )?;
    if let Some(bad) = fits.iter().find(|f| !f.converged) {
        return Err(SfaError::NonConvergence(format!(
            "fit at alpha {} on the sample",
            bad.alpha.value()
        )));
    }
    let star = fits.last().expect("path is nonempty");
    let mut tests = Vec::new();
    // candidates strictly below α*, ML first
    for (step, fit) in fits[..fits.len() - 1].iter().enumerate() {
        let seed = config.seed.wrapping_add((step as u64) << 48);
        let t = mcs_test_fits(data, fit, star, config.m, seed, options)?;
        let accept = t.accept;
        tests.push(t);
        if accept {
            return Ok(Selection {
                alpha: fit.alpha,
                alpha_star,
                exhausted: false,
                tests,
                fits,
            });
        }
    }
    Ok(Selection {
        alpha: alpha_star,
        alpha_star,
        exhausted: true,
        tests,
        fits,
    })
}
