//! Influence curves, the similarity index and the contamination pipeline
//! against brute-force oracles.

mod common;

use common::*;
use mdpd_sfa::alpha_select::{mcs_test, similarity_of};
use mdpd_sfa::fit::{fit_from, fit_mdpd, FitOptions, FitResult};
use mdpd_sfa::io::{parse_csv, write_csv_to};
use mdpd_sfa::model::{FrontierSpec, PseudoFamily};
use mdpd_sfa::robustness::{
    contaminate_downward, contaminate_upward, generate_clean, influence_curve, run_simulation,
    Contamination, SimConfig,
};
use mdpd_sfa::stats::RngStream;
use mdpd_sfa::{Alpha, Dataset, QuadratureConfig};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn clean_fit(alpha: f64, n: usize, seed: u64) -> (Dataset, FitResult) {
    let d = table_sample(n, seed, 0);
    let f = fit_mdpd(
        &d,
        PseudoFamily::Nh,
        Alpha::new(alpha).unwrap(),
        &FitOptions::default(),
    )
    .unwrap();
    assert!(f.converged);
    (d, f)
}

fn y_grid() -> Vec<f64> {
    (0..=400).map(|k| -100.0 + 0.5 * k as f64).collect()
}

#[test]
fn robust_influence_is_bounded() {
    let (d, f) = clean_fit(0.3, 500, 701);
    let grid = y_grid();
    let curve = influence_curve(&f, &d, &[0.5], &grid, &QuadratureConfig::default()).unwrap();
    let norms: Vec<f64> = curve.iter().map(|r| norm(r)).collect();
    let (imax, max) = norms.iter().enumerate().fold(
        (0, 0.0),
        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
    );
    assert!(grid[imax].abs() < 20.0, "peak at {}", grid[imax]);
    // beyond |y₀| = 20 nothing rises above the interior peak
    for (y, v) in grid.iter().zip(&norms) {
        if y.abs() >= 20.0 {
            assert!(*v <= 1.05 * max, "{y}: {v} vs {max}");
        }
    }
    assert!(norms[0] <= 1.05 * max && norms[400] <= 1.05 * max);
}

#[test]
fn likelihood_influence_grows_without_bound() {
    let (d, f) = clean_fit(0.0, 500, 701);
    let g0 = f.model.frontier.eval(&f.theta_hat.beta, &[0.5]);
    let grid = [-100.0, g0, 100.0];
    let curve = influence_curve(&f, &d, &[0.5], &grid, &QuadratureConfig::default()).unwrap();
    let near = norm(&curve[1]);
    assert!(norm(&curve[0]) >= 5.0 * near);
    assert!(norm(&curve[2]) >= 5.0 * near);
}

#[test]
fn influence_predicts_a_single_added_point() {
    let n = 2000;
    for alpha in [0.0, 0.3] {
        let (d, f) = clean_fit(alpha, n, 702);
        let x0 = [0.5];
        let y0 = f.model.frontier.eval(&f.theta_hat.beta, &x0) + 2.0;
        let ifv = &influence_curve(&f, &d, &x0, &[y0], &QuadratureConfig::default()).unwrap()[0];

        let mut x = d.input_column(0);
        let mut y = d.output().to_vec();
        x.push(x0[0]);
        y.push(y0);
        let plus = Dataset::single_input(x, y).unwrap();
        let opts = FitOptions {
            grad_tol: 1e-10,
            ..FitOptions::default()
        };
        let base = fit_from(&d, &f.model, f.alpha, &f.theta_hat, &opts).unwrap();
        let moved = fit_from(&plus, &f.model, f.alpha, &base.theta_hat, &opts).unwrap();
        let delta: Vec<f64> = moved
            .theta_hat
            .to_vec()
            .iter()
            .zip(base.theta_hat.to_vec())
            .map(|(a, b)| (n + 1) as f64 * (a - b))
            .collect();
        let diff: Vec<f64> = delta.iter().zip(ifv).map(|(a, b)| a - b).collect();
        assert!(
            norm(&diff) <= 0.2 * norm(ifv),
            "α {alpha}: {delta:?} vs {ifv:?}"
        );
    }
}

#[test]
fn similarity_matches_rejection_sampling() {
    // y = 0.2 + 0.9x and y = 0.8 − 0.5x on the unit box cross inside it
    let d = Dataset::single_input(vec![0.0, 1.0, 0.3], vec![0.0, 1.0, 0.5]).unwrap();
    let fr = FrontierSpec::new(1);
    let (b0, b1) = ([0.2, 0.9], [0.8, -0.5]);
    let s = similarity_of(&d, &fr, &b0, &b1).unwrap();
    let mut r = RngStream::new(703, 0);
    let n = 10_000_000;
    let hits = (0..n)
        .filter(|_| {
            let (x, y) = (r.uniform(), r.uniform());
            let (a, b) = (0.2 + 0.9 * x, 0.8 - 0.5 * x);
            y >= a.min(b) && y <= a.max(b)
        })
        .count();
    let mc = hits as f64 / n as f64;
    assert!((s - mc).abs() <= 1e-3, "{s} vs {mc}");
    assert_eq!(s, similarity_of(&d, &fr, &b1, &b0).unwrap());
}

#[test]
fn clean_sample_passes_the_similarity_test() {
    let (d, f0) = clean_fit(0.0, 500, 704);
    let t = mcs_test(
        &d,
        &f0,
        Alpha::new(0.5).unwrap(),
        99,
        704,
        &FitOptions::default(),
    )
    .unwrap();
    assert!(t.accept, "{} vs {}", t.sim_observed, t.sim_bootstrap_max);
    assert_eq!(t.sim_bootstrap.len(), 98);
}

#[test]
fn generated_data_survives_a_csv_round_trip() {
    let cfg = SimConfig::table_design(Contamination::None, vec![Alpha::ZERO], 705);
    let mut r = RngStream::new(705, 0);
    let d = generate_clean(&cfg, &mut r).unwrap();
    let d = contaminate_upward(&d, 3, 5.0, &cfg.truth, &mut r).unwrap();
    let d = contaminate_downward(&d, 3, &mut r).unwrap();
    let mut buf = Vec::new();
    write_csv_to(&d, &mut buf).unwrap();
    let back = parse_csv(buf.as_slice()).unwrap();
    assert_eq!(back.output(), d.output());
    assert_eq!(back.input_column(0), d.input_column(0));
}

#[test]
fn upward_outliers_hurt_likelihood_efficiency_scores() {
    let cfg = SimConfig::table_design(
        Contamination::Upward { n_o: 3, p_v: 5.0 },
        vec![Alpha::ZERO],
        706,
    );
    let rep = run_simulation(&cfg).unwrap();
    let mse = rep.estimators[0].mse_te;
    assert!((mse - 0.285).abs() <= 0.05, "{mse}");
}
