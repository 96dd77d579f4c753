//! `mdpd-sfa`: robust stochastic frontier estimation from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical
//! non-convergence.

// `!(a > b)` is used on purpose so that NaN lands in the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mdpd_sfa::alpha_select::{select_alpha, SelectConfig};
use mdpd_sfa::efficiency::technical_efficiency;
use mdpd_sfa::fit::{fit_mdpd, FitOptions, FitResult};
use mdpd_sfa::io::{data_warnings, kde, load_csv, write_columns, write_csv};
use mdpd_sfa::report::{Estimate, InfluenceReport, McsReport, Report, TeReport};
use mdpd_sfa::robustness::{
    contaminate_downward, contaminate_upward, generate_clean, influence_curve, run_simulation,
    skewed_firms, Contamination, SimConfig,
};
use mdpd_sfa::stats::RngStream;
use mdpd_sfa::{Alpha, Dataset, PseudoFamily, SfaError};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "mdpd-sfa",
    version,
    about = "Robust stochastic frontier estimation by minimum density power divergence"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Fit the frontier at one or more values of alpha.
    Fit(FitArgs),
    /// Fit, then score technical efficiency per observation.
    Te(FitArgs),
    /// Choose alpha with the bootstrap similarity test.
    SelectAlpha(SelectArgs),
    /// Influence curve of the fitted estimator along a grid of outputs.
    Influence(InfluenceArgs),
    /// Monte Carlo contamination experiment.
    Simulate(SimulateArgs),
    /// Write a synthetic dataset.
    GenData(GenArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FamilyArg {
    Nt,
    Nh,
    Ne,
}

impl From<FamilyArg> for PseudoFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Nt => PseudoFamily::Nt,
            FamilyArg::Nh => PseudoFamily::Nh,
            FamilyArg::Ne => PseudoFamily::Ne,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ContaminationArg {
    None,
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Preset {
    /// `Y = 5 + 5X + V − U`, `σ_v² = 0.75`, `σ_u² = 1`.
    Table,
    /// Right-skewed synthetic firm data in per-employee logs.
    SkewedFirms,
}

#[derive(Debug, Args, Serialize)]
struct Common {
    /// Input CSV with a header and a column named y.
    #[arg(long)]
    input: PathBuf,
    /// JSON report path; the text table goes to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "nh")]
    family: FamilyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Single alpha in [0, 1].
    #[arg(long, conflicts_with = "alpha_grid")]
    alpha: Option<f64>,
    /// Comma-separated ascending alphas, fitted in order.
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
    /// Also write plot-ready columnar files next to the report.
    #[arg(long)]
    emit_plots: bool,
}

#[derive(Debug, Args, Serialize)]
struct SelectArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated ascending grid; the last value is the test arm.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.05,0.1,0.2,0.3,0.4,0.5"
    )]
    alpha_grid: Vec<f64>,
    /// Bootstrap size: m − 1 replicates, level 1/m.
    #[arg(long, default_value_t = 99)]
    m: usize,
}

#[derive(Debug, Args, Serialize)]
struct InfluenceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    /// Input point; defaults to the sample means.
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = -100.0, allow_hyphen_values = true)]
    y0_min: f64,
    #[arg(long, default_value_t = 100.0, allow_hyphen_values = true)]
    y0_max: f64,
    #[arg(long, default_value_t = 401)]
    points: usize,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "nh")]
    family: FamilyArg,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    alpha_grid: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    replications: usize,
    /// Use the full 1,000 replications.
    #[arg(long)]
    full_scale: bool,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, value_enum, default_value = "none")]
    contamination: ContaminationArg,
    #[arg(long, default_value_t = 3)]
    n_outliers: usize,
    #[arg(long, default_value_t = 5.0)]
    p_v: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct GenArgs {
    /// CSV path to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    preset: Preset,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, value_enum, default_value = "none")]
    contamination: ContaminationArg,
    #[arg(long, default_value_t = 3)]
    n_outliers: usize,
    #[arg(long, default_value_t = 5.0)]
    p_v: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<SfaError> for Failure {
    fn from(e: SfaError) -> Self {
        let code = match e {
            SfaError::Parse { .. }
            | SfaError::Io(_)
            | SfaError::DegenerateData(_)
            | SfaError::DesignMatrix
            | SfaError::Dimension { .. }
            | SfaError::UndefinedMetric(_) => 3,
            SfaError::NonConvergence(_)
            | SfaError::Quadrature { .. }
            | SfaError::SingularInformation => 4,
            SfaError::ParameterDomain(_) | SfaError::Invalid(_) => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Fit(a) => cmd_fit(cli, a, false),
        Command::Te(a) => cmd_fit(cli, a, true),
        Command::SelectAlpha(a) => cmd_select(cli, a),
        Command::Influence(a) => cmd_influence(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::GenData(a) => cmd_gen(a),
    }
}

fn alphas(values: &[f64]) -> Result<Vec<Alpha>, Failure> {
    if values.is_empty() {
        return Err(usage("empty alpha list"));
    }
    let out = values
        .iter()
        .map(|&v| Alpha::new(v).map_err(|_| usage(format!("alpha {v} is outside [0, 1]"))))
        .collect::<Result<Vec<_>, _>>()?;
    if out.windows(2).any(|w| w[1].value() <= w[0].value()) {
        return Err(usage("alpha grid must be strictly ascending"));
    }
    Ok(out)
}

fn load(common: &Common) -> Result<Dataset, Failure> {
    let data = load_csv(&common.input)?;
    for w in data_warnings(&data) {
        eprintln!("warning: {w}");
    }
    Ok(data)
}

fn emit(report: &Report, output: Option<&Path>) -> CliResult {
    print!("{}", report.to_text());
    if let Some(path) = output {
        std::fs::write(path, report.to_json()?).map_err(SfaError::from)?;
    }
    Ok(())
}

/// `<output stem>_<suffix>.csv` beside the report, or in the working
/// directory when no report path is given.
fn sibling(output: Option<&Path>, suffix: &str) -> PathBuf {
    match output {
        Some(p) => {
            let stem = p
                .file_stem()
                .map_or("report".into(), |s| s.to_string_lossy().into_owned());
            p.with_file_name(format!("{stem}_{suffix}.csv"))
        }
        None => PathBuf::from(format!("mdpd_sfa_{suffix}.csv")),
    }
}

fn fit_options(seed: u64) -> FitOptions {
    FitOptions {
        seed,
        ..FitOptions::default()
    }
}

fn non_converged(fits: &[FitResult]) -> Option<Failure> {
    fits.iter().find(|f| !f.converged).map(|f| Failure {
        code: 4,
        message: format!("fit at alpha {} did not converge", f.alpha.value()),
    })
}

fn cmd_fit(cli: &Cli, a: &FitArgs, with_te: bool) -> CliResult {
    let data = load(&a.common)?;
    let family = a.common.family.into();
    let grid = match (&a.alpha, &a.alpha_grid) {
        (Some(v), _) => alphas(&[*v])?,
        (None, Some(g)) => alphas(g)?,
        (None, None) => vec![Alpha::ZERO],
    };
    let opts = fit_options(a.common.seed);
    let fits: Vec<FitResult> = grid
        .iter()
        .map(|&alpha| fit_mdpd(&data, family, alpha, &opts))
        .collect::<Result<_, _>>()?;

    let mut report = Report::new(cli, vec![a.common.seed])?;
    report.estimates = fits.iter().map(Estimate::from).collect();
    let out = a.common.output.as_deref();

    if with_te {
        let mut te_reports = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![data.output().to_vec()];
        let mut names: Vec<String> = vec!["y".into()];
        for j in 0..data.num_inputs() {
            columns.push(data.input_column(j));
            names.push(data.input_names()[j].clone());
        }
        for f in fits.iter().filter(|f| f.converged) {
            let scores = technical_efficiency(f, &data)?;
            names.push(format!("te_alpha_{}", f.alpha.value()));
            columns.push(scores.te.clone());
            te_reports.push(TeReport::new(f.alpha.value(), &scores));
        }
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        write_columns(&sibling(out, "te"), &name_refs, &columns)?;
        if a.emit_plots {
            write_te_plots(&data, family, &te_reports, out, &opts)?;
        }
        report.te = Some(te_reports);
    }
    emit(&report, out)?;
    match non_converged(&fits) {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

/// Density estimate of every TE column, and TE at α = 0 against TE at each
/// other α.
fn write_te_plots(
    data: &Dataset,
    family: PseudoFamily,
    te: &[TeReport],
    out: Option<&Path>,
    opts: &FitOptions,
) -> CliResult {
    for t in te {
        let (xs, ds) = kde(&t.te, 512);
        write_columns(
            &sibling(out, &format!("te_density_alpha_{}", t.alpha)),
            &["te", "density"],
            &[xs, ds],
        )?;
    }
    let ml = match te.iter().find(|t| t.alpha == 0.0) {
        Some(t) => t.te.clone(),
        None => {
            let f = fit_mdpd(data, family, Alpha::ZERO, opts)?;
            technical_efficiency(&f, data)?.te
        }
    };
    for t in te.iter().filter(|t| t.alpha != 0.0) {
        write_columns(
            &sibling(out, &format!("te_scatter_alpha_{}", t.alpha)),
            &["te_ml", "te_alpha"],
            &[ml.clone(), t.te.clone()],
        )?;
    }
    Ok(())
}

fn cmd_select(cli: &Cli, a: &SelectArgs) -> CliResult {
    let data = load(&a.common)?;
    if a.m < 2 {
        return Err(usage("--m must be at least 2"));
    }
    let config = SelectConfig {
        alpha_grid: alphas(&a.alpha_grid)?,
        m: a.m,
        seed: a.common.seed,
    };
    let opts = fit_options(a.common.seed);
    let sel = select_alpha(&data, a.common.family.into(), &config, &opts)?;
    let mut report = Report::new(cli, vec![a.common.seed])?;
    report.estimates = sel.fits.iter().map(Estimate::from).collect();
    report.mcs = Some(McsReport::from(&sel));
    emit(&report, a.common.output.as_deref())
}

fn cmd_influence(cli: &Cli, a: &InfluenceArgs) -> CliResult {
    let data = load(&a.common)?;
    let alpha = alphas(&[a.alpha])?[0];
    if a.points < 2 || !(a.y0_max > a.y0_min) {
        return Err(usage("need at least two grid points and y0-max > y0-min"));
    }
    let opts = fit_options(a.common.seed);
    let fit = fit_mdpd(&data, a.common.family.into(), alpha, &opts)?;
    if let Some(f) = non_converged(std::slice::from_ref(&fit)) {
        return Err(f);
    }
    let x0 = match &a.x0 {
        Some(v) => v.clone(),
        None => (0..data.num_inputs())
            .map(|j| data.input_column(j).iter().sum::<f64>() / data.len() as f64)
            .collect(),
    };
    let y0: Vec<f64> = (0..a.points)
        .map(|i| a.y0_min + (a.y0_max - a.y0_min) * i as f64 / (a.points - 1) as f64)
        .collect();
    let curve = influence_curve(&fit, &data, &x0, &y0, &opts.quadrature)?;
    let norm: Vec<f64> = curve
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let out = a.common.output.as_deref();
    let dim = curve.first().map_or(0, Vec::len);
    let mut names = vec!["y0".to_string()];
    names.extend((0..dim).map(|k| format!("if_{k}")));
    names.push("norm".into());
    let mut columns = vec![y0.clone()];
    columns.extend((0..dim).map(|k| curve.iter().map(|r| r[k]).collect()));
    columns.push(norm.clone());
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    write_columns(&sibling(out, "influence"), &name_refs, &columns)?;

    let mut report = Report::new(cli, vec![a.common.seed])?;
    report.estimates = vec![Estimate::from(&fit)];
    report.influence = Some(InfluenceReport {
        alpha: alpha.value(),
        x0,
        y0,
        curve,
        norm,
    });
    emit(&report, out)
}

fn contamination(kind: ContaminationArg, n_o: usize, p_v: f64) -> Contamination {
    match kind {
        ContaminationArg::None => Contamination::None,
        ContaminationArg::Up => Contamination::Upward { n_o, p_v },
        ContaminationArg::Down => Contamination::Downward { n_o },
    }
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> CliResult {
    let mut grid = alphas(&a.alpha_grid)?;
    if !grid[0].is_zero() {
        grid.insert(0, Alpha::ZERO);
    }
    let mut config = SimConfig::table_design(
        contamination(a.contamination, a.n_outliers, a.p_v),
        grid,
        a.seed,
    );
    config.family = a.family.into();
    config.n = a.n;
    config.replications = if a.full_scale { 1000 } else { a.replications };
    config.fit.seed = a.seed;
    let sim = run_simulation(&config)?;
    let mut report = Report::new(cli, vec![a.seed])?;
    report.simulation = Some(sim);
    emit(&report, a.output.as_deref())
}

fn cmd_gen(a: &GenArgs) -> CliResult {
    if a.n < 5 {
        return Err(usage("--n must be at least 5"));
    }
    let mut rng = RngStream::new(a.seed, 0);
    let clean = match a.preset {
        Preset::Table => {
            let cfg = SimConfig::table_design(Contamination::None, vec![Alpha::ZERO], a.seed);
            generate_clean(&SimConfig { n: a.n, ..cfg }, &mut rng)?
        }
        Preset::SkewedFirms => skewed_firms(a.n, &mut rng)?.0,
    };
    let data = match contamination(a.contamination, a.n_outliers, a.p_v) {
        Contamination::None => clean,
        Contamination::Upward { n_o, p_v } => {
            if matches!(a.preset, Preset::SkewedFirms) {
                return Err(usage(
                    "upward contamination is defined for the table preset",
                ));
            }
            let truth = SimConfig::table_design(Contamination::None, vec![], 0).truth;
            contaminate_upward(&clean, n_o, p_v, &truth, &mut rng)?
        }
        Contamination::Downward { n_o } => contaminate_downward(&clean, n_o, &mut rng)?,
    };
    write_csv(&data, &a.output)?;
    eprintln!("wrote {} rows to {}", data.len(), a.output.display());
    Ok(())
}
