//! Machine-readable (JSON) and human-readable (aligned text) reports.
//!
//! Text tables print the same numbers as the JSON, rounded to three
//! decimals.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::alpha_select::{McsResult, Selection};
use crate::efficiency::TEScores;
use crate::error::{Result, SfaError};
use crate::fit::FitResult;
use crate::robustness::SimReport;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Point estimates in both the `(σ_v², σ_u²)` and `(σ², γ)` forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaReport {
    pub beta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    pub sigma_v2: f64,
    pub sigma_u2: f64,
    pub sigma2: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeReport {
    pub beta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    pub sigma_v: f64,
    pub sigma_u: f64,
    pub sigma2: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub alpha: f64,
    pub theta: ThetaReport,
    pub se: Option<SeReport>,
    pub objective: f64,
    pub converged: bool,
    pub boundary_flag: bool,
    pub iterations: usize,
    pub restarts_used: usize,
}

impl From<&FitResult> for Estimate {
    fn from(f: &FitResult) -> Self {
        let t = &f.theta_hat;
        let se = f.std_errors.as_ref().and_then(|se| {
            let (s2, g) = f.derived_std_errors()?;
            let q = t.beta.len();
            let (mu, rest) = if t.mu.is_some() {
                (Some(se[q]), &se[q + 1..])
            } else {
                (None, &se[q..])
            };
            Some(SeReport {
                beta: se[..q].to_vec(),
                mu,
                sigma_v: rest[0],
                sigma_u: rest[1],
                sigma2: s2,
                gamma: g,
            })
        });
        Self {
            alpha: f.alpha.value(),
            theta: ThetaReport {
                beta: t.beta.clone(),
                mu: t.mu,
                sigma_v2: t.sigma_v2(),
                sigma_u2: t.sigma_u2(),
                sigma2: t.sigma2(),
                gamma: t.gamma(),
            },
            se,
            objective: f.objective_value,
            converged: f.converged,
            boundary_flag: f.boundary,
            iterations: f.iterations,
            restarts_used: f.restarts_used,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeReport {
    pub alpha: f64,
    pub te: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl TeReport {
    pub fn new(alpha: f64, scores: &TEScores) -> Self {
        Self {
            alpha,
            te: scores.te.clone(),
            residuals: scores.residuals.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsReport {
    pub selected_alpha: f64,
    pub alpha_star: f64,
    pub exhausted: bool,
    pub tests: Vec<McsResult>,
}

impl From<&Selection> for McsReport {
    fn from(s: &Selection) -> Self {
        Self {
            selected_alpha: s.alpha.value(),
            alpha_star: s.alpha_star.value(),
            exhausted: s.exhausted,
            tests: s.tests.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub alpha: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    /// One row per `y0`, in the `(β, μ, σ_v, σ_u)` layout.
    pub curve: Vec<Vec<f64>>,
    pub norm: Vec<f64>,
}

/// Top-level report written by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub config: serde_json::Value,
    pub estimates: Vec<Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub te: Option<Vec<TeReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcs: Option<McsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub influence: Option<InfluenceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimReport>,
    pub seeds: Vec<u64>,
}

impl Report {
    pub fn new<C: Serialize>(config: &C, seeds: Vec<u64>) -> Result<Self> {
        Ok(Self {
            version: VERSION.to_string(),
            config: serde_json::to_value(config)
                .map_err(|e| SfaError::Invalid(format!("config is not serializable: {e}")))?,
            estimates: Vec::new(),
            te: None,
            mcs: None,
            influence: None,
            simulation: None,
            seeds,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| SfaError::Invalid(format!("report is not serializable: {e}")))
    }

    /// The text rendering of every section present.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mdpd-sfa {}", self.version);
        if !self.estimates.is_empty() {
            out.push_str(&estimates_table(&self.estimates));
        }
        if let Some(m) = &self.mcs {
            out.push_str(&mcs_table(m));
        }
        if let Some(s) = &self.simulation {
            out.push_str(&simulation_table(s));
        }
        if let Some(i) = &self.influence {
            let max = i.norm.iter().copied().fold(0.0, f64::max);
            let _ = writeln!(
                out,
                "influence curve: alpha {:.3}, {} grid points, max norm {:.3}",
                i.alpha,
                i.y0.len(),
                max
            );
        }
        if let Some(te) = &self.te {
            for t in te {
                let n = t.te.len().max(1) as f64;
                let mean = t.te.iter().sum::<f64>() / n;
                let _ = writeln!(
                    out,
                    "TE (alpha {:.3}): n {}, mean {:.3}",
                    t.alpha,
                    t.te.len(),
                    mean
                );
            }
        }
        out
    }
}

/// Three decimals, the precision of the text tables.
pub fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn render(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (j, c) in r.iter().enumerate().take(cols) {
            width[j] = width[j].max(c.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(j, c)| format!("{:>w$}", c, w = width[j]))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(header);
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Estimates with standard errors in parentheses.
pub fn estimates_table(estimates: &[Estimate]) -> String {
    let q = estimates.first().map_or(0, |e| e.theta.beta.len());
    let has_mu = estimates.iter().any(|e| e.theta.mu.is_some());
    let mut header = vec!["alpha".to_string()];
    header.extend((0..q).map(|j| format!("beta{j}")));
    if has_mu {
        header.push("mu".into());
    }
    header.extend(
        [
            "sigma2", "gamma", "sigma_v2", "sigma_u2", "conv", "boundary",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let with_se = |v: f64, se: Option<f64>| match se {
        Some(s) => format!("{} ({})", fmt3(v), fmt3(s)),
        None => fmt3(v),
    };
    let rows: Vec<Vec<String>> = estimates
        .iter()
        .map(|e| {
            let se = e.se.as_ref();
            let mut r = vec![fmt3(e.alpha)];
            for j in 0..q {
                r.push(with_se(e.theta.beta[j], se.map(|s| s.beta[j])));
            }
            if has_mu {
                r.push(match e.theta.mu {
                    Some(m) => with_se(m, se.and_then(|s| s.mu)),
                    None => "-".into(),
                });
            }
            r.push(with_se(e.theta.sigma2, se.map(|s| s.sigma2)));
            r.push(with_se(e.theta.gamma, se.map(|s| s.gamma)));
            r.push(fmt3(e.theta.sigma_v2));
            r.push(fmt3(e.theta.sigma_u2));
            r.push(if e.converged { "yes" } else { "no" }.into());
            r.push(if e.boundary_flag { "yes" } else { "no" }.into());
            r
        })
        .collect();
    render(&header, &rows)
}

/// One row per test: observed similarity, bootstrap maximum, decision.
pub fn mcs_table(m: &McsReport) -> String {
    let header: Vec<String> = ["T0 alpha", "T1 alpha", "sim(T0,T1)", "max(sim*)", "H0"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = m
        .tests
        .iter()
        .map(|t| {
            vec![
                fmt3(t.alpha0.value()),
                fmt3(t.alpha1.value()),
                format!("{:.5}", t.sim_observed),
                format!("{:.5}", t.sim_bootstrap_max),
                if t.accept { "Acc." } else { "Rej." }.to_string(),
            ]
        })
        .collect();
    let mut out = render(&header, &rows);
    let _ = writeln!(
        out,
        "selected alpha {}{}",
        fmt3(m.selected_alpha),
        if m.exhausted { " (grid exhausted)" } else { "" }
    );
    out
}

/// Mean (SD/MSE) per parameter, then d, its ratio to ML, and MSE of TE.
pub fn simulation_table(s: &SimReport) -> String {
    let Some(first) = s.estimators.first() else {
        return String::new();
    };
    let mut header = vec!["alpha".to_string()];
    header.extend(first.params.iter().map(|p| p.name.clone()));
    header.extend(
        ["d", "ratio", "MSE_TE", "fail"]
            .iter()
            .map(|s| s.to_string()),
    );
    let rows: Vec<Vec<String>> = s
        .estimators
        .iter()
        .map(|e| {
            let mut r = vec![fmt3(e.alpha.value())];
            r.extend(
                e.params
                    .iter()
                    .map(|p| format!("{} ({}/{})", fmt3(p.mean), fmt3(p.sd), fmt3(p.mse))),
            );
            r.push(fmt3(e.mean_d));
            r.push(format!("[{}]", fmt3(e.ratio_d)));
            r.push(fmt3(e.mse_te));
            r.push(e.failures.to_string());
            r
        })
        .collect();
    render(&header, &rows)
}
