//! Large-sample proxy for the sampling distribution of p-values.
//!
//! With the estimator approximately N(θ₁, λ₁²/n), a uniform point `u` maps
//! to the estimate θ₁ + Φ⁻¹(u)·λ₁/√n. Testing that estimate against a null
//! centred at θ₀ with scale λ₀ gives p-values of the form Φ(±(a₁√n + b₁(u)))
//! with a₁ = (θ₁ − θ₀)/λ₀ and b₁(u) = Φ⁻¹(u)·λ₁/λ₀. For fixed `u`, the logit
//! of such a p-value becomes linear in `n` with slope −a₁²/2 as n grows
//! (for two-sided tests, the logit of half the p-value). This module
//! evaluates the proxy exactly, in log space where needed, and checks that
//! limit numerically.

use crate::numeric::{log_std_normal_cdf, logit_std_normal_cdf, std_normal_cdf, std_normal_quantile, NumericError};
use crate::pvalue::HypothesisKind;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProxyError {
    #[error("lambda0 and lambda1 must be positive (got {0}, {1})")]
    NonPositiveScale(f64, f64),
    #[error("n grid must be strictly increasing with at least 3 points")]
    BadGrid,
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Asymptotic description of one process: its estimand and the √n-scaled
/// standard deviations of the estimator under it (λ₁) and under the null (λ₀).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxyConfig {
    pub theta1: f64,
    pub lambda0: f64,
    pub lambda1: f64,
}

impl ProxyConfig {
    pub fn new(theta1: f64, lambda0: f64, lambda1: f64) -> Result<Self, ProxyError> {
        if !(lambda0 > 0.0 && lambda1 > 0.0) {
            return Err(ProxyError::NonPositiveScale(lambda0, lambda1));
        }
        Ok(Self {
            theta1,
            lambda0,
            lambda1,
        })
    }

    /// a₁ = (θ₁ − θ₀)/λ₀.
    pub fn a1(&self, theta0: f64) -> f64 {
        (self.theta1 - theta0) / self.lambda0
    }

    /// b₁(u) = Φ⁻¹(u)·λ₁/λ₀.
    pub fn b1(&self, u: f64) -> Result<f64, ProxyError> {
        Ok(std_normal_quantile(u)? * self.lambda1 / self.lambda0)
    }
}

/// θ₁ + Φ⁻¹(u)·λ₁/√n.
pub fn proxy_theta_hat(cfg: &ProxyConfig, n: f64, u: f64) -> Result<f64, ProxyError> {
    Ok(cfg.theta1 + std_normal_quantile(u)? * cfg.lambda1 / n.sqrt())
}

// Argument x = a₁√n + b₁(u) of each one-sided proxy.
fn argument(cfg: &ProxyConfig, theta0: f64, n: f64, u: f64) -> Result<f64, ProxyError> {
    Ok(cfg.a1(theta0) * n.sqrt() + cfg.b1(u)?)
}

/// Proxy p-value for the requested hypothesis.
pub fn proxy_p(cfg: &ProxyConfig, n: f64, u: f64, kind: &HypothesisKind) -> Result<f64, ProxyError> {
    Ok(match *kind {
        HypothesisKind::OneSidedLower { theta0 } => std_normal_cdf(-argument(cfg, theta0, n, u)?),
        HypothesisKind::OneSidedUpper { theta0 } => std_normal_cdf(argument(cfg, theta0, n, u)?),
        HypothesisKind::TwoSided { theta0 } => 2.0 * std_normal_cdf(-argument(cfg, theta0, n, u)?.abs()),
        HypothesisKind::Equivalence {
            theta0_lower,
            theta0_upper,
        } => {
            let lower = std_normal_cdf(-argument(cfg, theta0_lower, n, u)?);
            let upper = std_normal_cdf(argument(cfg, theta0_upper, n, u)?);
            lower.max(upper)
        }
    })
}

/// The quantity whose slope in `n` tends to −a₁²/2: logit(p) for one-sided
/// and equivalence tests, logit(p/2) for two-sided tests. Evaluated in log
/// space so it stays finite when p underflows.
pub fn proxy_logit(cfg: &ProxyConfig, n: f64, u: f64, kind: &HypothesisKind) -> Result<f64, ProxyError> {
    Ok(match *kind {
        HypothesisKind::OneSidedLower { theta0 } => logit_std_normal_cdf(-argument(cfg, theta0, n, u)?),
        HypothesisKind::OneSidedUpper { theta0 } => logit_std_normal_cdf(argument(cfg, theta0, n, u)?),
        HypothesisKind::TwoSided { theta0 } => logit_std_normal_cdf(-argument(cfg, theta0, n, u)?.abs()),
        HypothesisKind::Equivalence {
            theta0_lower,
            theta0_upper,
        } => {
            let lower = logit_std_normal_cdf(-argument(cfg, theta0_lower, n, u)?);
            let upper = logit_std_normal_cdf(argument(cfg, theta0_upper, n, u)?);
            lower.max(upper)
        }
    })
}

/// log of the proxy p-value; finite for any `n`.
pub fn proxy_log_p(cfg: &ProxyConfig, n: f64, u: f64, kind: &HypothesisKind) -> Result<f64, ProxyError> {
    Ok(match *kind {
        HypothesisKind::OneSidedLower { theta0 } => log_std_normal_cdf(-argument(cfg, theta0, n, u)?),
        HypothesisKind::OneSidedUpper { theta0 } => log_std_normal_cdf(argument(cfg, theta0, n, u)?),
        HypothesisKind::TwoSided { theta0 } => {
            std::f64::consts::LN_2 + log_std_normal_cdf(-argument(cfg, theta0, n, u)?.abs())
        }
        HypothesisKind::Equivalence {
            theta0_lower,
            theta0_upper,
        } => log_std_normal_cdf(-argument(cfg, theta0_lower, n, u)?)
            .max(log_std_normal_cdf(argument(cfg, theta0_upper, n, u)?)),
    })
}

/// Limiting slope −a₁²/2. For equivalence tests the tail nearer to θ₁
/// dominates, so a₁ uses the closer bound.
pub fn limiting_slope(cfg: &ProxyConfig, kind: &HypothesisKind) -> f64 {
    let a = match *kind {
        HypothesisKind::OneSidedLower { theta0 }
        | HypothesisKind::OneSidedUpper { theta0 }
        | HypothesisKind::TwoSided { theta0 } => cfg.a1(theta0),
        HypothesisKind::Equivalence {
            theta0_lower,
            theta0_upper,
        } => cfg.a1(theta0_lower).abs().min(cfg.a1(theta0_upper).abs()),
    };
    -0.5 * a * a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopePoint {
    pub n: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeReport {
    pub points: Vec<SlopePoint>,
    pub limit: f64,
    /// |last slope − limit| / |limit|, or the absolute error when the limit is 0.
    pub relative_error: f64,
}

/// Central finite-difference slopes of [`proxy_logit`] at each grid point,
/// with step `max(1, n/1000)`.
pub fn verify_theorem1_slope(
    cfg: &ProxyConfig,
    u: f64,
    kind: &HypothesisKind,
    n_grid: &[f64],
) -> Result<SlopeReport, ProxyError> {
    if n_grid.len() < 3 || n_grid.windows(2).any(|w| !(w[0] < w[1])) || n_grid[0] <= 1.0 {
        return Err(ProxyError::BadGrid);
    }
    let points = n_grid
        .iter()
        .map(|&n| {
            let h = (n * 1e-3).max(1.0).min(0.5 * (n - 1.0));
            let up = proxy_logit(cfg, n + h, u, kind)?;
            let down = proxy_logit(cfg, n - h, u, kind)?;
            Ok(SlopePoint {
                n,
                slope: (up - down) / (2.0 * h),
            })
        })
        .collect::<Result<Vec<_>, ProxyError>>()?;
    let limit = limiting_slope(cfg, kind);
    let last = points.last().map(|p| p.slope).unwrap_or(f64::NAN);
    let relative_error = if limit == 0.0 {
        (last - limit).abs()
    } else {
        ((last - limit) / limit).abs()
    };
    Ok(SlopeReport {
        points,
        limit,
        relative_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::logit;
    use crate::rng::{Purpose, RngStream, StreamPath};

    fn cfg(theta1: f64, l0: f64, l1: f64) -> ProxyConfig {
        ProxyConfig::new(theta1, l0, l1).unwrap()
    }

    const LOWER0: HypothesisKind = HypothesisKind::OneSidedLower { theta0: 0.0 };

    #[test]
    fn theta_hat_substitution() {
        let c = cfg(0.0, 1.0, 1.0);
        assert_eq!(proxy_theta_hat(&c, 100.0, 0.5).unwrap(), 0.0);
        let u = std_normal_cdf(1.0);
        assert!((proxy_theta_hat(&c, 4.0, u).unwrap() - 0.5).abs() < 1e-12);
        let c = cfg(0.7, 1.0, 2.0);
        let d100 = proxy_theta_hat(&c, 100.0, 0.9).unwrap() - 0.7;
        let d400 = proxy_theta_hat(&c, 400.0, 0.9).unwrap() - 0.7;
        assert!((d100 / d400 - 2.0).abs() < 1e-12);
        assert!(ProxyConfig::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn proxy_p_reference_values() {
        let c = cfg(0.3, 1.0, 1.0);
        let null = HypothesisKind::OneSidedLower { theta0: 0.3 };
        assert_eq!(proxy_p(&c, 50.0, 0.5, &null).unwrap(), 0.5);
        assert_eq!(proxy_p(&c, 50.0, 0.5, &HypothesisKind::TwoSided { theta0: 0.3 }).unwrap(), 1.0);
        let c = cfg(0.5, 1.0, 1.0);
        let p = proxy_p(&c, 16.0, 0.5, &LOWER0).unwrap();
        assert!((p - 0.022_750_131_948_179_2).abs() < 1e-12);
    }

    #[test]
    fn proxy_p_matches_monte_carlo_null_tail() {
        // p = Pr(θ₀ + Z λ₀/√n ≥ θ̂) by brute force over the null distribution.
        let c = cfg(0.3, 1.0, 1.3);
        let (n, u) = (50.0, 0.8);
        let theta_hat = proxy_theta_hat(&c, n, u).unwrap();
        let draws = 1_000_000;
        let mut rng = RngStream::new(3, StreamPath::new(0, 0, 0, Purpose::Custom(7)));
        let hits = (0..draws)
            .filter(|_| crate::rng::standard_normal(&mut rng) * c.lambda0 / n.sqrt() >= theta_hat)
            .count();
        let mc = hits as f64 / draws as f64;
        let p = proxy_p(&c, n, u, &LOWER0).unwrap();
        let mcse = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((mc - p).abs() < 3.0 * mcse, "{mc} vs {p}");
    }

    #[test]
    fn logit_agrees_with_direct_evaluation() {
        let c = cfg(0.2, 1.0, 1.5);
        for kind in [
            LOWER0,
            HypothesisKind::OneSidedUpper { theta0: 0.5 },
            HypothesisKind::TwoSided { theta0: 0.0 },
        ] {
            let p = proxy_p(&c, 40.0, 0.3, &kind).unwrap();
            let direct = match kind {
                HypothesisKind::TwoSided { .. } => logit(0.5 * p),
                _ => logit(p),
            };
            assert!((proxy_logit(&c, 40.0, 0.3, &kind).unwrap() - direct).abs() < 1e-9);
            assert!((proxy_log_p(&c, 40.0, 0.3, &kind).unwrap() - p.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn equivalence_proxy_is_max_of_tails() {
        let c = cfg(0.05, 1.0, 1.2);
        let kind = HypothesisKind::Equivalence {
            theta0_lower: -0.3,
            theta0_upper: 0.3,
        };
        for n in [20.0, 60.0, 150.0] {
            for u in [0.1, 0.5, 0.9] {
                let eq = proxy_p(&c, n, u, &kind).unwrap();
                let l = proxy_p(&c, n, u, &HypothesisKind::OneSidedLower { theta0: -0.3 }).unwrap();
                let r = proxy_p(&c, n, u, &HypothesisKind::OneSidedUpper { theta0: 0.3 }).unwrap();
                assert_eq!(eq, l.max(r));
            }
        }
    }

    #[test]
    fn one_sided_proxy_decreases_in_n() {
        let c = cfg(0.4, 1.0, 1.1);
        let mut prev = f64::INFINITY;
        for n in 1..2000 {
            let l = proxy_log_p(&c, n as f64, 0.3, &LOWER0).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn limiting_slope_values() {
        let c = cfg(0.5, 1.0, 1.0);
        assert_eq!(limiting_slope(&c, &LOWER0), -0.125);
        let r = verify_theorem1_slope(&c, 0.5, &LOWER0, &[1e3, 1e4, 1e5]).unwrap();
        assert!(r.relative_error < 0.01, "{r:?}");
        let flat = cfg(0.0, 1.0, 1.0);
        let r = verify_theorem1_slope(&flat, 0.7, &LOWER0, &[1e3, 1e4, 1e5]).unwrap();
        assert_eq!(r.limit.abs(), 0.0);
        assert!(r.points.iter().all(|p| p.slope.abs() < 1e-9));
        assert!(verify_theorem1_slope(&c, 0.5, &LOWER0, &[1e3, 1e4]).is_err());
        assert!(verify_theorem1_slope(&c, 0.5, &LOWER0, &[1e3, 1e3, 1e4]).is_err());
    }

    #[test]
    fn slope_error_shrinks_monotonically() {
        let grid = [1e3, 3e3, 1e4, 3e4, 1e5, 3e5, 1e6];
        for a1 in [0.3, 0.5, 1.0] {
            for u in [0.2, 0.5, 0.8] {
                for ratio in [0.5, 1.0, 2.0] {
                    let c = cfg(a1, 1.0, ratio);
                    for kind in [LOWER0, HypothesisKind::TwoSided { theta0: 0.0 }] {
                        let r = verify_theorem1_slope(&c, u, &kind, &grid).unwrap();
                        let errs: Vec<f64> = r.points.iter().map(|p| (p.slope - r.limit).abs()).collect();
                        for w in errs.windows(2) {
                            assert!(w[1] <= w[0] + 1e-12, "a1={a1} u={u} ratio={ratio}: {errs:?}");
                        }
                    }
                }
            }
        }
    }
}
