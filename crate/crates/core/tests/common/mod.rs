//! Helpers shared by the integration tests.
#![allow(dead_code)]

use mdpd_sfa::model::{FrontierSpec, PseudoFamily, SfModel, Theta};
use mdpd_sfa::objective::{h_alpha, Alpha};
use mdpd_sfa::stats::{sample_half_normal, sample_truncated_normal, RngStream};
use mdpd_sfa::{Dataset, QuadratureConfig};

pub const FAMILIES: [PseudoFamily; 3] = [PseudoFamily::Nt, PseudoFamily::Nh, PseudoFamily::Ne];

/// A random evaluation point: parameters, inputs and an output near the
/// frontier.
pub struct Point {
    pub model: SfModel,
    pub theta: Theta,
    pub x: Vec<f64>,
    pub y: f64,
}

pub fn random_point(family: PseudoFamily, r: &mut RngStream) -> Point {
    let p = 1 + r.index(2);
    let model = SfModel::new(family, FrontierSpec::new(p));
    let beta: Vec<f64> = (0..=p).map(|_| r.uniform_range(-2.0, 2.0)).collect();
    let mu = family.has_mu().then(|| r.uniform_range(-1.0, 1.0));
    let theta = Theta::new(
        beta,
        mu,
        r.uniform_range(0.3, 2.0),
        r.uniform_range(0.3, 2.0),
    );
    let x: Vec<f64> = (0..p).map(|_| r.uniform_range(-2.0, 2.0)).collect();
    let s = theta.sigma2().sqrt();
    let y = model.frontier.eval(&theta.beta, &x) + r.uniform_range(-3.0 * s, 2.0 * s);
    Point { model, theta, x, y }
}

/// A random point whose output is an observation drawn from the model
/// itself, so it sits in the bulk of the density rather than a tail.
pub fn model_point(family: PseudoFamily, r: &mut RngStream) -> Point {
    let mut pt = random_point(family, r);
    let th = &pt.theta;
    let u = match family {
        PseudoFamily::Nt => sample_truncated_normal(th.mu.unwrap(), th.sigma_u, r).unwrap(),
        PseudoFamily::Nh => sample_half_normal(th.sigma_u, r).unwrap(),
        PseudoFamily::Ne => -th.sigma_u * (1.0 - r.uniform()).ln(),
    };
    pt.y = pt.model.frontier.eval(&th.beta, &pt.x) + th.sigma_v * r.standard_normal() - u;
    pt
}

/// Quadrature far tighter than the default, for finite-difference oracles.
pub fn tight_quad() -> QuadratureConfig {
    QuadratureConfig {
        rel_tol: 1e-13,
        abs_tol: 1e-15,
        max_subdivisions: 2000,
        ..QuadratureConfig::default()
    }
}

/// Central differences of `H_α` in θ.
pub fn fd_h_gradient(pt: &Point, alpha: Alpha) -> Vec<f64> {
    let quad = tight_quad();
    let family = pt.model.family;
    let q = pt.theta.beta.len();
    let center = pt.theta.to_vec();
    (0..center.len())
        .map(|k| {
            let h = 1e-4 * center[k].abs().max(1.0);
            let eval = |d: f64| {
                let mut v = center.clone();
                v[k] += d;
                let th = Theta::from_vec(family, q, &v).unwrap();
                h_alpha(&pt.model, &th, &pt.x, pt.y, alpha, &quad).unwrap()
            };
            (eval(h) - eval(-h)) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(floor);
    diff / scale
}

/// The clean simulation design `Y = 5 + 5X + V − U`, `σ_v² = 0.75`, `σ_u² = 1`.
pub fn table_sample(n: usize, seed: u64, stream: u64) -> Dataset {
    let mut r = RngStream::new(seed, stream);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut u_all = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = r.uniform();
        let u = sample_half_normal(1.0, &mut r).unwrap();
        x.push(xi);
        y.push(5.0 + 5.0 * xi + 0.75f64.sqrt() * r.standard_normal() - u);
        u_all.push(Some(u));
    }
    Dataset::single_input(x, y)
        .unwrap()
        .with_true_u(u_all)
        .unwrap()
}

pub fn table_truth() -> Theta {
    Theta::from_variances(vec![5.0, 5.0], 0.75, 1.0)
}

pub fn nh_line() -> SfModel {
    SfModel::new(PseudoFamily::Nh, FrontierSpec::new(1))
}
