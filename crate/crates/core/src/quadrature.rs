//! Adaptive Gauss–Kronrod (10/21) integration of vector-valued integrands on a
//! finite interval.
//!
//! All components share the same panels: a panel is bisected while any
//! component's accumulated error exceeds its tolerance. The integrands used by
//! the divergence objective are the power density and its score moments,
//! which peak at the same place.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfaError};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Tolerances and integration window for the power integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Half-width of the window around the frontier, in units of the noise
    /// scale. The inefficiency side is widened further by the family.
    pub window_halfwidth_sigmas: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            window_halfwidth_sigmas: 12.0,
            max_subdivisions: 200,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-8) {
            return Err(SfaError::Invalid(format!(
                "quadrature rel_tol must lie in (0, 1e-8], got {}",
                self.rel_tol
            )));
        }
        if !(self.abs_tol > 0.0) {
            return Err(SfaError::Invalid(
                "quadrature abs_tol must be positive".into(),
            ));
        }
        if !(self.window_halfwidth_sigmas >= 10.0) {
            return Err(SfaError::Invalid(format!(
                "window half-width must be at least 10 sigmas, got {}",
                self.window_halfwidth_sigmas
            )));
        }
        if self.max_subdivisions == 0 {
            return Err(SfaError::Invalid(
                "max_subdivisions must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Integral {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub subdivisions: usize,
}

struct Panel {
    a: f64,
    b: f64,
    values: Vec<f64>,
    abs_values: Vec<f64>,
    errors: Vec<f64>,
    priority: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority)
    }
}

fn gk21<F>(f: &F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> Panel
where
    F: Fn(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut abs = vec![0.0; dim];

    f(center, buf);
    for c in 0..dim {
        kron[c] = WGK[10] * buf[c];
        abs[c] = WGK[10] * buf[c].abs();
    }
    let mut lo = vec![0.0; dim];
    for j in 0..10 {
        let dx = half * XGK[j];
        f(center - dx, &mut lo);
        f(center + dx, buf);
        for c in 0..dim {
            let s = lo[c] + buf[c];
            kron[c] += WGK[j] * s;
            abs[c] += WGK[j] * (lo[c].abs() + buf[c].abs());
            if j % 2 == 1 {
                gauss[c] += WG[j / 2] * s;
            }
        }
    }
    let mut errors = vec![0.0; dim];
    for c in 0..dim {
        kron[c] *= half;
        gauss[c] *= half;
        abs[c] *= half.abs();
        errors[c] = (kron[c] - gauss[c]).abs();
    }
    Panel {
        a,
        b,
        values: kron,
        abs_values: abs,
        errors,
        priority: 0.0,
    }
}

/// Integrate a `dim`-component integrand over `[breaks[0], breaks[last]]`.
///
/// `breaks` must be increasing; each interval between consecutive breaks is
/// split into `initial_panels` equal panels before adaptive bisection. A
/// component has converged when its error is below
/// `max(abs_tol, rel_tol · ∫|f_c|)`.
pub fn integrate<F>(
    f: F,
    dim: usize,
    breaks: &[f64],
    initial_panels: usize,
    rel_tol: f64,
    abs_tol: f64,
    max_subdivisions: usize,
) -> Result<Integral>
where
    F: Fn(f64, &mut [f64]),
{
    assert!(breaks.len() >= 2 && dim >= 1);
    let mut buf = vec![0.0; dim];
    let mut heap = BinaryHeap::new();
    let per = initial_panels.max(1);
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if !(hi > lo) {
            continue;
        }
        let step = (hi - lo) / per as f64;
        for k in 0..per {
            let a = lo + step * k as f64;
            let b = if k + 1 == per { hi } else { a + step };
            heap.push(gk21(&f, a, b, dim, &mut buf));
        }
    }

    let mut subdivisions = 0usize;
    loop {
        let mut total = vec![0.0; dim];
        let mut total_abs = vec![0.0; dim];
        let mut total_err = vec![0.0; dim];
        for p in heap.iter() {
            for c in 0..dim {
                total[c] += p.values[c];
                total_abs[c] += p.abs_values[c];
                total_err[c] += p.errors[c];
            }
        }
        let tol: Vec<f64> = (0..dim)
            .map(|c| abs_tol.max(rel_tol * total_abs[c]))
            .collect();
        let converged = (0..dim).all(|c| total_err[c] <= tol[c]);
        if converged || subdivisions >= max_subdivisions {
            if !converged {
                let c = (0..dim)
                    .max_by(|&i, &j| (total_err[i] / tol[i]).total_cmp(&(total_err[j] / tol[j])))
                    .unwrap_or(0);
                return Err(SfaError::Quadrature {
                    error_estimate: total_err[c],
                    subdivisions,
                });
            }
            // Sum panels in a fixed left-to-right order so the result does not
            // depend on heap layout.
            let mut panels: Vec<Panel> = heap.into_vec();
            panels.sort_by(|p, q| p.a.total_cmp(&q.a));
            let mut values = vec![0.0; dim];
            for p in &panels {
                for (v, pv) in values.iter_mut().zip(&p.values) {
                    *v += pv;
                }
            }
            return Ok(Integral {
                values,
                errors: total_err,
                subdivisions,
            });
        }

        // re-rank panels by their share of the worst component's tolerance
        let mut panels = heap.into_vec();
        for p in panels.iter_mut() {
            p.priority = (0..dim).map(|c| p.errors[c] / tol[c]).fold(0.0, f64::max);
        }
        heap = BinaryHeap::from(panels);
        let worst = heap.pop().expect("non-empty panel set");
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(gk21(&f, worst.a, mid, dim, &mut buf));
        heap.push(gk21(&f, mid, worst.b, dim, &mut buf));
        subdivisions += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(
            |x, out| {
                out[0] = x.powi(5) - 3.0 * x * x + 1.0;
                out[1] = 2.0;
            },
            2,
            &[-1.0, 2.0],
            1,
            1e-12,
            1e-14,
            10,
        )
        .unwrap();
        // ∫_{-1}^{2} x^5 - 3x^2 + 1 = (64-1)/6 - 9 + 3
        assert!((r.values[0] - (63.0 / 6.0 - 6.0)).abs() < 1e-12);
        assert!((r.values[1] - 6.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_mass_with_narrow_peak() {
        let s = 1e-3;
        let r = integrate(
            |x, out| {
                out[0] =
                    (-0.5 * (x / s) * (x / s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            },
            1,
            &[-5.0, 0.0, 5.0],
            4,
            1e-10,
            1e-13,
            200,
        )
        .unwrap();
        assert!((r.values[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reports_nonconvergence() {
        let r = integrate(
            |x, out| out[0] = (1.0 / x.abs().max(1e-300)).sqrt(),
            1,
            &[-1.0, 1.0],
            1,
            1e-14,
            1e-16,
            3,
        );
        assert!(matches!(r, Err(SfaError::Quadrature { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(QuadratureConfig::default().validate().is_ok());
        let bad = QuadratureConfig {
            rel_tol: 1e-6,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let narrow = QuadratureConfig {
            window_halfwidth_sigmas: 5.0,
            ..Default::default()
        };
        assert!(narrow.validate().is_err());
    }
}
