//! Scalar special functions: the standard normal CDF and quantile, log-space
//! tail probabilities, and the logit transform.
//!
//! `std_normal_cdf` is built on the musl `erfc` (via `libm`), whose relative
//! error is below 1 ulp over the whole real line, so the absolute error of
//! Φ is bounded by a few multiples of `f64::EPSILON` everywhere.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use thiserror::Error;

/// Clip bound applied to probabilities before taking logits.
pub const LOGIT_CLIP: f64 = 1e-15;

/// Φ⁻¹(0.75), the normal-consistency constant for median absolute deviations.
pub const NORMAL_MAD_SCALE: f64 = 0.674_489_750_196_081_7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityDomain(f64),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}

/// A real number in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self, NumericError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(NumericError::InvalidProbability(value))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to 1.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            Self(1.0)
        } else {
            Self(value.clamp(0.0, 1.0))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = NumericError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF Φ(z). Saturates to exactly 0 or 1 far in the tails.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// log Φ(z), accurate for arbitrarily negative `z`.
pub fn log_std_normal_cdf(z: f64) -> f64 {
    if z > 0.0 {
        (-std_normal_cdf(-z)).ln_1p()
    } else if z > -5.0 {
        std_normal_cdf(z).ln()
    } else {
        let x = -z;
        -0.5 * x * x - 0.5 * (2.0 * PI).ln() + mills_ratio(x).ln()
    }
}

/// logit(Φ(z)) evaluated in log space, so it stays finite where Φ(z)
/// rounds to 0 or 1.
#[inline]
pub fn logit_std_normal_cdf(z: f64) -> f64 {
    log_std_normal_cdf(z) - log_std_normal_cdf(-z)
}

// Mills ratio Φ(-x)/φ(x) by backward evaluation of the Laplace continued
// fraction; only used for x >= 5 where 60 levels are far beyond convergence.
fn mills_ratio(x: f64) -> f64 {
    let mut tail = x;
    for k in (1..=60).rev() {
        tail = x + k as f64 / tail;
    }
    1.0 / tail
}

/// Standard normal quantile Φ⁻¹(p).
///
/// Acklam's rational approximation (relative error ~1e-9) followed by one
/// Halley step against the `erfc`-based CDF, which brings the result to
/// full double precision.
pub fn std_normal_quantile(p: f64) -> Result<f64, NumericError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NumericError::ProbabilityDomain(p));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement. The residual is taken on the smaller tail to avoid
    // cancellation near p = 1.
    let e = if x <= 0.0 {
        std_normal_cdf(x) - p
    } else {
        (1.0 - p) - std_normal_cdf(-x)
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Clips a probability into `[LOGIT_CLIP, 1 - LOGIT_CLIP]`.
#[inline]
pub fn clip_probability(p: f64) -> f64 {
    p.clamp(LOGIT_CLIP, 1.0 - LOGIT_CLIP)
}

/// logit(p) = log(p) - log(1 - p), with `p` clipped first so the result is
/// always finite.
#[inline]
pub fn logit(p: f64) -> f64 {
    let p = clip_probability(p);
    p.ln() - (-p).ln_1p()
}

/// Inverse logit, evaluated on the numerically stable branch.
#[inline]
pub fn inv_logit(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent erf oracle: Maclaurin series for |x| <= 3, Laplace continued
    // fraction for the complementary tail beyond.
    fn oracle_cdf(z: f64) -> f64 {
        let x = z / 2f64.sqrt();
        if x.abs() <= 3.0 {
            let mut term = x;
            let mut sum = x;
            let mut k = 0.0;
            loop {
                k += 1.0;
                term *= -x * x / k;
                let add = term / (2.0 * k + 1.0);
                sum += add;
                if add.abs() < 1e-18 * sum.abs().max(1e-300) && k > 5.0 {
                    break;
                }
            }
            0.5 * (1.0 + 2.0 / PI.sqrt() * sum)
        } else {
            let t = z.abs();
            let mut cf = t;
            for k in (1..=200).rev() {
                cf = t + k as f64 / cf;
            }
            let tail = std_normal_pdf(t) / cf;
            if z < 0.0 {
                tail
            } else {
                1.0 - tail
            }
        }
    }

    #[test]
    fn cdf_reference_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(1.959963985) - 0.975).abs() < 1e-9);
        assert!(std_normal_cdf(-8.0) <= 1e-15);
        assert!(std_normal_cdf(-8.0) > 0.0);
        assert_eq!(std_normal_cdf(-40.0), 0.0);
        assert_eq!(std_normal_cdf(40.0), 1.0);
    }

    #[test]
    fn cdf_matches_series_oracle() {
        let mut z = -8.0;
        while z <= 8.0 {
            let err = (std_normal_cdf(z) - oracle_cdf(z)).abs();
            assert!(err <= 1e-12, "z = {z}: err {err}");
            z += 0.01;
        }
    }

    #[test]
    fn quantile_reference_values() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        assert!((std_normal_quantile(0.975).unwrap() - 1.959963985).abs() < 1e-8);
        assert!((std_normal_quantile(0.1).unwrap() + 1.281551566).abs() < 1e-8);
        assert!((std_normal_quantile(0.75).unwrap() - NORMAL_MAD_SCALE).abs() < 1e-15);
    }

    #[test]
    fn quantile_rejects_boundary() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(std_normal_quantile(p).is_err());
        }
    }

    #[test]
    fn quantile_inverts_cdf_on_grid() {
        for i in 1..10_000 {
            let p = i as f64 / 10_000.0;
            let z = std_normal_quantile(p).unwrap();
            assert!((std_normal_cdf(z) - p).abs() <= 1e-10, "p = {p}");
        }
        for p in [1e-12, 1e-8, 1e-5, 1.0 - 1e-8] {
            let z = std_normal_quantile(p).unwrap();
            assert!((std_normal_cdf(z) - p).abs() <= 1e-10 * p.max(1e-6));
        }
    }

    #[test]
    fn log_cdf_is_continuous_and_accurate() {
        for z in [-4.999, -5.0, -5.001, -6.0, -20.0, -30.0] {
            let direct = std_normal_cdf(z).ln();
            assert!((log_std_normal_cdf(z) - direct).abs() < 1e-10 * direct.abs(), "z = {z}");
        }
        // Far tail stays finite and follows -z^2/2 asymptotics.
        let l = log_std_normal_cdf(-1000.0);
        assert!(l.is_finite());
        assert!((l + 500_000.0 + 1000f64.ln() + 0.5 * (2.0 * PI).ln()).abs() < 1e-5);
        assert!((log_std_normal_cdf(3.0) - std_normal_cdf(3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn logit_reference_values() {
        assert_eq!(logit(0.5), 0.0);
        assert!((logit(0.75) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(inv_logit(0.0), 0.5);
        assert!(logit(0.0).is_finite());
        assert!(logit(1.0).is_finite());
        assert!((logit_std_normal_cdf(1.3) - logit(std_normal_cdf(1.3))).abs() < 1e-12);
    }

    #[test]
    fn logit_round_trip_grid() {
        let mut exps = Vec::new();
        for e in 1..=10 {
            exps.push(10f64.powi(-e));
            exps.push(1.0 - 10f64.powi(-e));
        }
        for i in 1..1000 {
            exps.push(i as f64 / 1000.0);
        }
        for p in exps {
            assert!((inv_logit(logit(p)) - p).abs() <= 1e-12, "p = {p}");
        }
    }

    #[test]
    fn probability_newtype() {
        assert!(Probability::new(1.5).is_err());
        assert!(Probability::new(-0.0).is_ok());
        assert_eq!(Probability::saturating(f64::NAN).value(), 1.0);
        assert_eq!(Probability::saturating(2.0).value(), 1.0);
    }
}
