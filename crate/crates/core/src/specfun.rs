//! Scalar special functions used by the count families and the residual
//! diagnostics.
//!
//! Everything here is a pure function of its arguments. Functions with a
//! restricted domain return [`Error::Domain`] instead of a NaN.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};

use crate::error::{Error, Result};

/// ln(2π)/2
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Above this argument the Stirling series is used directly.
const STIRLING_CUTOFF: f64 = 15.0;

fn domain(what: &str, value: f64) -> Error {
    Error::Domain(format!("{what} (got {value})"))
}

/// Tail of the Stirling series, `ln Γ(x) - [(x - 1/2) ln x - x + ln(2π)/2]`.
fn stirling_tail(x: f64) -> f64 {
    let r = 1.0 / x;
    let r2 = r * r;
    r * (1.0 / 12.0
        - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 * (1.0 / 1680.0 - r2 / 1188.0))))
}

pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    // Lanczos sum is evaluated on [2, ∞); below that, ln Γ(x) = ln Γ(x + 1) - ln x.
    if x < 2.0 {
        return log_gamma_unchecked(x + 1.0) - x.ln();
    }
    if x >= STIRLING_CUTOFF {
        return (x - 0.5) * x.ln() - x + HALF_LN_2PI + stirling_tail(x);
    }
    let z = x - 1.0;
    let mut sum = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        sum += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    HALF_LN_2PI + (z + 0.5) * t.ln() - t + sum.ln()
}

/// Natural logarithm of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain("log_gamma requires a finite x > 0", x));
    }
    Ok(log_gamma_unchecked(x))
}

/// `ln Γ(x + d) - ln Γ(x)` for `x > 0`, `x + d > 0`.
///
/// For large `x` the two log-gammas are nearly equal and huge; the difference
/// is formed from the Stirling expansion so that no cancellation occurs.
/// Integer `d` up to a small bound is summed as a rising factorial.
pub fn log_gamma_ratio(x: f64, d: f64) -> Result<f64> {
    if !(x > 0.0) || !(x + d > 0.0) || !x.is_finite() || !d.is_finite() {
        return Err(domain("log_gamma_ratio requires x > 0 and x + d > 0", x));
    }
    Ok(log_gamma_ratio_unchecked(x, d))
}

pub(crate) fn log_gamma_ratio_unchecked(x: f64, d: f64) -> f64 {
    if d == 0.0 {
        return 0.0;
    }
    let lo = x.min(x + d);
    if lo >= STIRLING_CUTOFF {
        let y = x + d;
        // (y - 1/2) ln y - (x - 1/2) ln x - d, rearranged around ln1p(d/x)
        (x - 0.5) * (d / x).ln_1p() + d * y.ln() - d + stirling_tail(y) - stirling_tail(x)
    } else if d.fract() == 0.0 && d > 0.0 && d <= 64.0 {
        (0..d as usize).map(|k| (x + k as f64).ln()).sum()
    } else {
        log_gamma_unchecked(x + d) - log_gamma_unchecked(x)
    }
}

/// `ln B(a, b) = ln Γ(a) + ln Γ(b) - ln Γ(a + b)`.
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(domain("log_beta requires a > 0", a));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(domain("log_beta requires b > 0", b));
    }
    Ok(log_beta_unchecked(a, b))
}

pub(crate) fn log_beta_unchecked(a: f64, b: f64) -> f64 {
    let (small, large) = if a < b { (a, b) } else { (b, a) };
    // ln Γ(small) - [ln Γ(large + small) - ln Γ(large)]
    log_gamma_unchecked(small) - log_gamma_ratio_unchecked(large, small)
}

/// `ln K_{m - 1/2}(t)`, the modified Bessel function of the second kind at a
/// half-integer order, for integer `m >= 0` and `t > 0`.
pub fn log_bessel_k_half(m: u64, t: f64) -> Result<f64> {
    Ok(log_bessel_k_half_scaled(m, t)? - t)
}

/// `ln K_{m - 1/2}(t) + t`.
///
/// `K_{1/2}(t) = sqrt(π / 2t) e^{-t}`, and `K_{-1/2} = K_{1/2}`. Higher orders
/// follow `K_{λ+1} = K_{λ-1} + (2λ/t) K_λ`, run on the ratio
/// `r_j = K_{j+1/2} / K_{j-1/2}`, which obeys `r_j = 1/r_{j-1} + (2j - 1)/t`
/// with `r_0 = 1`. Every ratio is positive so the upward run is stable.
pub fn log_bessel_k_half_scaled(m: u64, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(domain("log_bessel_k_half requires a finite t > 0", t));
    }
    let mut log_k = 0.5 * (PI / (2.0 * t)).ln();
    let mut ratio = 1.0;
    for j in 1..m {
        ratio = 1.0 / ratio + (2 * j - 1) as f64 / t;
        log_k += ratio.ln();
    }
    Ok(log_k)
}

/// Standard normal cumulative distribution function.
///
/// Evaluated on the lower tail only, so `Φ(-z) = 1 - Φ(z)` holds by
/// construction.
pub fn std_normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z > 0.0 {
        1.0 - lower_tail(-z)
    } else {
        lower_tail(z)
    }
}

/// Upper tail `1 - Φ(z)` without cancellation.
pub fn std_normal_sf(z: f64) -> f64 {
    std_normal_cdf(-z)
}

fn lower_tail(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - HALF_LN_2PI).exp()
}

// Acklam's rational approximation to the normal quantile (relative error
// about 1.2e-9), polished by one Newton step below.
const QA: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const QB: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const QC: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const QD: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const Q_LOW: f64 = 0.024_25;

fn quantile_lower_half(p: f64) -> f64 {
    let x = if p < Q_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((QC[0] * q + QC[1]) * q + QC[2]) * q + QC[3]) * q + QC[4]) * q + QC[5])
            / ((((QD[0] * q + QD[1]) * q + QD[2]) * q + QD[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((QA[0] * r + QA[1]) * r + QA[2]) * r + QA[3]) * r + QA[4]) * r + QA[5]) * q
            / (((((QB[0] * r + QB[1]) * r + QB[2]) * r + QB[3]) * r + QB[4]) * r + 1.0)
    };
    // One Newton step on Φ(x) = p. Far in the tail Φ underflows and the
    // rational estimate is returned as is.
    let cdf = lower_tail(x);
    if cdf > 0.0 {
        let step = (cdf - p) / std_normal_pdf(x);
        if step.is_finite() {
            return x - step;
        }
    }
    x
}

/// Inverse of the standard normal cdf on the open interval (0, 1).
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain("std_normal_quantile requires 0 < p < 1", p));
    }
    if p <= 0.5 {
        Ok(quantile_lower_half(p))
    } else {
        Ok(-quantile_lower_half(1.0 - p))
    }
}

/// `ln(e^a + e^b)` with the `-inf` cases handled.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 - e^x)` for `x <= 0`.
pub fn log1m_exp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn log_gamma_reference_points() {
        assert_eq!(log_gamma(1.0).unwrap(), 0.0);
        assert!((log_gamma(2.0).unwrap()).abs() < 1e-15);
        // mpmath, 30 digits
        let cases = [
            (0.5, 0.572_364_942_924_700_087),
            (6.0, 4.787_491_742_782_045_994),
            (2.5, 0.284_682_870_472_919_159),
            (0.1, 2.252_712_651_734_205_959),
            (1e-3, 6.907_178_885_383_853_682),
            (100.3, 360.514_705_729_058_131_2),
            (1e6, 12_815_504.569_147_611_66),
        ];
        for (x, want) in cases {
            let got = log_gamma(x).unwrap();
            assert!(close(got, want, 1e-13), "lgamma({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn log_gamma_rejects_nonpositive() {
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.5).is_err());
        assert!(log_gamma(f64::NAN).is_err());
    }

    #[test]
    fn log_beta_reference_points() {
        assert!(log_beta(1.0, 1.0).unwrap().abs() < 1e-15);
        assert!(close(log_beta(2.0, 3.0).unwrap(), (1.0f64 / 12.0).ln(), 1e-14));
        assert!(close(log_beta(0.5, 0.5).unwrap(), PI.ln(), 1e-14));
        assert!(log_beta(0.0, 1.0).is_err());
        assert!(log_beta(1.0, -2.0).is_err());
    }

    #[test]
    fn log_gamma_ratio_matches_direct_difference() {
        for &(x, d) in &[(0.3, 2.7), (3.0, 4.0), (20.0, 0.25), (1e6, 3.5), (40.0, -5.5)] {
            let direct = log_gamma(x + d).unwrap() - log_gamma(x).unwrap();
            let got = log_gamma_ratio(x, d).unwrap();
            assert!((got - direct).abs() < 1e-9 * (1.0 + direct.abs()), "{x} {d}");
        }
        // huge x: ratio Γ(x+1)/Γ(x) = x
        let x = 3.0e7;
        assert!(close(log_gamma_ratio(x, 1.0).unwrap(), x.ln(), 1e-14));
        assert!(close(log_gamma_ratio(x, 0.5).unwrap(), 0.5 * x.ln() - 1.0 / (8.0 * x), 1e-13));
    }

    #[test]
    fn bessel_closed_form_and_symmetry() {
        let want = (PI / 2.0).sqrt().ln() - 1.0;
        assert!(close(log_bessel_k_half(1, 1.0).unwrap(), want, 1e-15));
        assert_eq!(log_bessel_k_half(0, 1.0).unwrap(), log_bessel_k_half(1, 1.0).unwrap());
        // mpmath besselk(1.5, 2)
        assert!(close(log_bessel_k_half(2, 2.0).unwrap(), -1.715_317_129_527_080_84, 1e-14));
        assert!(close(log_bessel_k_half(30, 0.1).unwrap(), 157.249_948_090_948_08, 1e-13));
        assert!(close(log_bessel_k_half(6, 50.0).unwrap(), -51.433_443_887_405_655, 1e-14));
        assert!(close(log_bessel_k_half(11, 3.7).unwrap(), 6.434_955_160_795_245_7, 1e-14));
    }

    #[test]
    fn bessel_rejects_nonpositive_argument() {
        assert!(log_bessel_k_half(1, 0.0).is_err());
        assert!(log_bessel_k_half(3, -2.0).is_err());
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(1.959_964) - 0.975_000_000_903_557_6).abs() < 1e-15);
        assert!(std_normal_cdf(-40.0) < 1e-300);
        assert_eq!(std_normal_cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(std_normal_cdf(f64::INFINITY), 1.0);
        for z in [0.3, 1.1, 2.7, 5.0] {
            assert_eq!(std_normal_cdf(z), 1.0 - std_normal_cdf(-z));
        }
    }

    #[test]
    fn normal_quantile_reference_points() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        assert!((std_normal_quantile(0.975).unwrap() - 1.959_963_984_540_054_2).abs() < 1e-13);
        assert!((std_normal_quantile(0.4).unwrap() + 0.253_347_103_135_799_8).abs() < 1e-14);
        assert!((std_normal_quantile(1e-8).unwrap() + 5.612_001_244_174_787).abs() < 1e-12);
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert!(std_normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn log_add_exp_edges() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -3.0), -3.0);
        assert!((log_add_exp(0.0, 0.0) - LN_2).abs() < 1e-15);
        assert!((log1m_exp(-1e-20) - (1e-20f64).ln()).abs() < 1e-12);
        assert!((log1m_exp(-50.0) + (-50.0f64).exp()).abs() < 1e-30);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn log_gamma_functional_equation(x in 0.1f64..100.0) {
                let lhs = log_gamma(x + 1.0).unwrap();
                let rhs = log_gamma(x).unwrap() + x.ln();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            }

            #[test]
            fn quantile_inverts_cdf(p in 1e-8f64..(1.0 - 1e-8)) {
                let z = std_normal_quantile(p).unwrap();
                prop_assert!((std_normal_cdf(z) - p).abs() <= 1e-10 * p.min(1.0 - p).max(1e-6));
            }

            #[test]
            fn cdf_is_monotone(a in -8.0f64..7.0, h in 1e-6f64..1.0) {
                prop_assert!(std_normal_cdf(a + h) > std_normal_cdf(a));
            }
        }
    }
}
