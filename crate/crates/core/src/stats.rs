//! Scalar kernels for the standard normal family and the random streams used
//! by the simulators and the bootstrap.
//!
//! Everything that involves `Φ` in a denominator goes through
//! [`log_std_normal_cdf`] or [`mills_ratio`], which stay finite far into the
//! left tail where `Φ` itself underflows.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SfaError};

/// `1 / sqrt(2π)`
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// `0.5 · ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// `sqrt(2 / π)`
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Standard normal density `φ(x)`.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `ln φ(x)`.
#[inline]
pub fn log_std_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - HALF_LN_2PI
}

/// Standard normal distribution function `Φ(x)`.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Scaled complementary error function `exp(t²)·erfc(t)` for `t ≥ 0`.
///
/// The product form is used while `erfc` is representable, with `t²` split
/// into a head and an exact tail so the exponential does not amplify the
/// rounding of the square. Beyond that a continued fraction takes over.
pub fn erfcx(t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t < 26.0 {
        let hi = t * t;
        let lo = t.mul_add(t, -hi);
        libm::erfc(t) * hi.exp() * (1.0 + lo)
    } else {
        erfcx_continued_fraction(t)
    }
}

/// Laplace continued fraction for `erfcx`, evaluated by modified Lentz.
fn erfcx_continued_fraction(t: f64) -> f64 {
    // erfc(t)·e^{t²}·√π = 1 / (t + (1/2)/(t + 1/(t + (3/2)/(t + ...))))
    const TINY: f64 = 1e-300;
    let mut f = t;
    let mut c = t;
    let mut d = 0.0;
    for k in 1..200 {
        let a = 0.5 * k as f64;
        d = t + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = t + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    1.0 / (f * std::f64::consts::PI.sqrt())
}

/// `ln Φ(x)`, accurate in relative terms over `[-40, 40]` and finite far
/// beyond.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        x
    } else if x > 0.0 {
        (-0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)).ln_1p()
    } else if x >= -1.0 {
        (0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)).ln()
    } else {
        let t = -x * std::f64::consts::FRAC_1_SQRT_2;
        (0.5 * erfcx(t)).ln() - 0.5 * x * x
    }
}

/// Inverse Mills ratio `φ(x)/Φ(x)`.
///
/// For `x < -1` this is `sqrt(2/π) / erfcx(-x/√2)`, which has no cancellation
/// and tends to `-x` in the left tail.
pub fn mills_ratio(x: f64) -> f64 {
    if x.is_nan() {
        x
    } else if x < -1.0 {
        SQRT_2_OVER_PI / erfcx(-x * std::f64::consts::FRAC_1_SQRT_2)
    } else {
        std_normal_pdf(x) / std_normal_cdf(x)
    }
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by a counter-based ChaCha generator: the seed fixes the key and the
/// stream id selects an independent nonce, so replications and bootstrap
/// samples can each own a stream without coordination.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh stream with the same seed and `stream_id + offset`, starting at
    /// the beginning of that stream.
    pub fn fork(&self, offset: u64) -> Self {
        Self::new(self.seed, self.stream_id.wrapping_add(offset))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draw from `N⁺(0, σ_u²)`, i.e. `σ_u·|Z|`.
pub fn sample_half_normal(sigma_u: f64, rng: &mut RngStream) -> Result<f64> {
    if !(sigma_u > 0.0) || !sigma_u.is_finite() {
        return Err(SfaError::ParameterDomain(format!(
            "half-normal scale must be positive, got {sigma_u}"
        )));
    }
    Ok(sigma_u * rng.standard_normal().abs())
}

/// Draw from `N(μ, σ²)` conditioned on the draw being non-negative.
pub fn sample_truncated_normal(mu: f64, sigma: f64, rng: &mut RngStream) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
        return Err(SfaError::ParameterDomain(format!(
            "truncated normal needs finite mu and positive sigma, got ({mu}, {sigma})"
        )));
    }
    let z = mu / sigma;
    if std_normal_cdf(z) >= 0.1 {
        // acceptance probability Φ(μ/σ) is at least 10%
        loop {
            let x = mu + sigma * rng.standard_normal();
            if x >= 0.0 {
                return Ok(x);
            }
        }
    }
    // standardized lower bound a = -μ/σ > 1.28; exponential proposal with the
    // optimal rate for a one-sided tail
    let a = -z;
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let u1 = 1.0 - rng.uniform();
        let candidate = a - u1.ln() / rate;
        let u2 = rng.uniform();
        let diff = candidate - rate;
        if u2 <= (-0.5 * diff * diff).exp() {
            return Ok((mu + sigma * candidate).max(0.0));
        }
    }
}

#[cfg(test)]
// reference values are quoted to full published precision
#[allow(clippy::excessive_precision, clippy::approx_constant)]
mod tests {
    use super::*;

    // ln Φ(x) and φ(x)/Φ(x), 50-digit reference values.
    const REFERENCE: &[(f64, f64, f64)] = &[
        (-40.0, -804.60844201375378817, 40.024968847207263723),
        (-38.5, -745.69527029041108133, 38.525939096854493696),
        (-35.0, -616.97510126192251347, 35.02852497059668787),
        (-30.0, -454.32124395634319711, 30.033259667433677037),
        (-25.0, -316.63940800802025894, 25.039873012057562583),
        (-20.0, -203.91715537109726394, 20.049753068527850542),
        (-15.0, -116.13138484571169524, 15.066086827167822035),
        (-12.5, -81.575967870743883217, 12.579007304406976089),
        (-10.0, -53.231285150512470578, 10.098093233962511963),
        (-8.0, -35.013437159914549896, 8.1213681122361126807),
        (-6.0, -20.736768949974705655, 6.1584826045445989173),
        (-5.0, -15.064998393988725736, 5.1865039671258421156),
        (-4.0, -10.360101486527290828, 4.2256071444894710728),
        (-3.0, -6.6077262215103495433, 3.2830986549304365069),
        (-2.5, -5.0816482772786904984, 2.8227447976639072505),
        (-2.0, -3.7831843336820319488, 2.3732155328228408673),
        (-1.5, -2.705944400823889807, 1.9386771666225431895),
        (-1.0000001, -1.8410217975227952154, 1.5251353562512152835),
        (-1.0, -1.8410216450092635058, 1.5251352761609812091),
        (-0.9999999, -1.8410214924957399745, 1.5251351960707483929),
        (-0.5, -1.1759117615936186089, 1.1410777703680644809),
        (-0.1, -0.77615459273027332557, 0.86261747153093614384),
        (0.0, -0.69314718055994530942, 0.79788456080286535588),
        (0.1, -0.61650501011502628874, 0.73533174850578066492),
        (0.5, -0.36894641528865639307, 0.50916043383703348583),
        (1.0, -0.17275377902344988953, 0.28759997093917836123),
        (2.0, -0.023012909328963488465, 0.055247862678989959102),
        (3.0, -0.0013508099647481937988, 0.0044378390421256637933),
        (4.0, -0.00003167174337748926386, 0.00013383446446857514211),
        (5.0, -2.8665161296376359338e-7, 1.4867199409049057124e-6),
        (6.0, -9.8658764552437573169e-10, 6.0758828558176764452e-9),
        (8.0, -6.2209605742717860585e-16, 5.0522710835368954309e-15),
        (10.0, -7.619853024160526066e-24, 7.6945986267064193463e-23),
        (15.0, -3.6709661993127508858e-51, 5.5307095498444161592e-50),
        (20.0, -2.7536241186062336951e-89, 5.5209483621597631896e-88),
        (30.0, -4.9067139271481870595e-198, 1.473646134878547519e-196),
    ];

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn pdf_values() {
        assert!((std_normal_pdf(0.0) - 0.3989422804).abs() < 1e-10);
        assert!((std_normal_pdf(1.0) - 0.2419707245191433).abs() < 1e-15);
        for x in [0.3, 1.7, 5.0, 12.0] {
            assert_eq!(std_normal_pdf(x), std_normal_pdf(-x));
        }
    }

    #[test]
    fn log_cdf_matches_reference() {
        for &(x, lc, _) in REFERENCE {
            let got = log_std_normal_cdf(x);
            assert!(rel(got, lc) <= 1e-12, "x={x}: {got} vs {lc}");
        }
        assert!((log_std_normal_cdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
        let far = log_std_normal_cdf(-40.0);
        assert!(far > -810.0 && far < -790.0);
        // the x = 1.959964 example is log(0.975) only to ~1e-9
        assert!((log_std_normal_cdf(1.959964) - 0.975f64.ln()).abs() < 1e-8);
        assert!(rel(log_std_normal_cdf(1.959964), -0.025317807057564137) < 1e-12);
    }

    #[test]
    fn nan_passes_through() {
        assert!(log_std_normal_cdf(f64::NAN).is_nan());
        assert!(mills_ratio(f64::NAN).is_nan());
    }

    #[test]
    fn log_cdf_never_underflows() {
        let mut x = -40.0;
        while x <= 40.0 {
            let v = log_std_normal_cdf(x);
            assert!(v.is_finite() && v <= 0.0, "x={x}");
            x += 0.01;
        }
        assert!(log_std_normal_cdf(-1e3).is_finite());
        assert!(log_std_normal_cdf(-1e6).is_finite());
    }

    #[test]
    fn mills_matches_reference() {
        for &(x, _, m) in REFERENCE {
            let got = mills_ratio(x);
            assert!(rel(got, m) <= 1e-12, "x={x}: {got} vs {m}");
        }
        assert!((mills_ratio(0.0) - 0.7978846).abs() < 1e-7);
        let m = mills_ratio(-40.0);
        assert!((40.0..=40.1).contains(&m));
        assert!(mills_ratio(5.0) <= 1.5e-6);
    }

    #[test]
    fn mills_tail_and_monotone() {
        let mut prev = f64::INFINITY;
        let mut x = -60.0;
        while x < 30.0 {
            let m = mills_ratio(x);
            assert!(m < prev, "not decreasing at {x}");
            if x <= -10.0 {
                // -x < M(x) < -x + 1/|x|
                assert!(m > -x && m < -x + 1.0 / x.abs(), "x={x} m={m}");
            }
            prev = m;
            x += 0.05;
        }
        assert!(mills_ratio(-1e4).is_finite());
    }

    #[test]
    fn cdf_complement_identity() {
        let mut x = -8.0;
        while x <= 8.0 {
            let s = log_std_normal_cdf(x).exp() + log_std_normal_cdf(-x).exp();
            assert!((s - 1.0).abs() <= 1e-12, "x={x}");
            x += 0.1;
        }
    }

    #[test]
    fn mills_times_cdf_is_pdf() {
        let mut x = -30.0;
        while x <= 30.0 {
            let lhs = mills_ratio(x) * log_std_normal_cdf(x).exp();
            let rhs = std_normal_pdf(x);
            assert!(rel(lhs, rhs) <= 1e-12, "x={x}");
            x += 0.25;
        }
    }

    #[test]
    fn tail_products_stay_bounded() {
        // Φ^k |x|^l e^{-mx} (φ/Φ)^n on [-50, 50]
        for &(k, l, m, n) in &[(0.3, 1.0, 1.0, 1.0), (1.0, 2.0, 0.0, 2.0)] {
            let mut sup: f64 = 0.0;
            let mut x = -50.0;
            while x <= 50.0 {
                let log_v = k * log_std_normal_cdf(x) + l * x.abs().max(1e-300).ln() - m * x
                    + n * mills_ratio(x).max(1e-300).ln();
                let v = log_v.exp();
                assert!(v.is_finite());
                sup = sup.max(v);
                x += 0.01;
            }
            assert!(sup < 50.0, "({k},{l},{m},{n}) sup={sup}");
        }
    }

    #[test]
    fn erfcx_branches_agree() {
        let t = 26.0;
        let a = erfcx_continued_fraction(t);
        let hi = t * t;
        let lo = t.mul_add(t, -hi);
        let b = libm::erfc(t) * hi.exp() * (1.0 + lo);
        assert!(rel(a, b) < 1e-13);
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let draws = |seed, id| {
            let mut r = RngStream::new(seed, id);
            (0..64).map(|_| r.standard_normal()).collect::<Vec<_>>()
        };
        assert_eq!(draws(7, 3), draws(7, 3));
        assert_ne!(draws(7, 3), draws(7, 4));
        assert_ne!(draws(7, 3), draws(8, 3));
        let base = RngStream::new(7, 3);
        let mut forked = base.fork(1);
        let mut direct = RngStream::new(7, 4);
        assert_eq!(forked.next_u64(), direct.next_u64());
    }

    #[test]
    fn samplers_reject_bad_scale() {
        let mut r = RngStream::new(1, 0);
        assert!(sample_half_normal(0.0, &mut r).is_err());
        assert!(sample_half_normal(-1.0, &mut r).is_err());
        assert!(sample_truncated_normal(0.0, 0.0, &mut r).is_err());
    }

    #[test]
    fn half_normal_moments_and_cdf() {
        let n = 1_000_000;
        let mut r = RngStream::new(11, 0);
        let mut xs: Vec<f64> = (0..n)
            .map(|_| sample_half_normal(1.0, &mut r).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - SQRT_2_OVER_PI).abs() < 0.003, "mean={mean}");
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let cdf = libm::erf(x / std::f64::consts::SQRT_2);
            ks = ks
                .max((cdf - i as f64 / n as f64).abs())
                .max(((i + 1) as f64 / n as f64 - cdf).abs());
        }
        assert!(ks <= 0.002, "ks={ks}");
    }

    #[test]
    fn truncated_normal_cases() {
        let n = 1_000_000;
        let mut r = RngStream::new(5, 1);
        let mean = |r: &mut RngStream, mu: f64, s: f64| {
            (0..n)
                .map(|_| sample_truncated_normal(mu, s, r).unwrap())
                .sum::<f64>()
                / n as f64
        };
        let m0 = mean(&mut r, 0.0, 1.0);
        assert!((m0 - SQRT_2_OVER_PI).abs() < 0.003);
        let m3 = mean(&mut r, 3.0, 0.1);
        assert!((m3 - 3.0).abs() < 0.01);
        let m = mean(&mut r, -1.0, 1.0);
        let expected = -1.0 + mills_ratio(-1.0);
        assert!((m - expected).abs() < 0.005, "{m} vs {expected}");
        // deep truncation goes through the exponential proposal
        let deep = mean(&mut r, -4.0, 0.5);
        let expected = -4.0 + 0.5 * mills_ratio(-8.0);
        assert!((deep - expected).abs() < 0.005, "{deep} vs {expected}");
    }
}
