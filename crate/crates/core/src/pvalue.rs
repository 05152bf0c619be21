//! Wald p-values for one-sided, two-sided and equivalence hypotheses, using a
//! standard normal reference distribution.

use crate::estimators::EstimateResult;
use crate::numeric::{std_normal_cdf, Probability};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PValueError {
    #[error("estimate did not converge or has a non-positive standard error (se = {se})")]
    NotConverged { se: f64 },
    #[error("equivalence bounds must satisfy lower < upper (got {lower} >= {upper})")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("alpha {0} must lie in (0, 1)")]
    InvalidAlpha(f64),
    #[error("null value must be finite")]
    NonFinite,
}

/// Null-hypothesis family with its boundary value(s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HypothesisKind {
    /// H₀: θ ≤ θ₀.
    OneSidedLower { theta0: f64 },
    /// H₀: θ ≥ θ₀.
    OneSidedUpper { theta0: f64 },
    /// H₀: θ = θ₀.
    TwoSided { theta0: f64 },
    /// H₀: θ ≤ θ₀,L ∪ θ ≥ θ₀,U.
    Equivalence { theta0_lower: f64, theta0_upper: f64 },
}

impl HypothesisKind {
    pub fn name(&self) -> &'static str {
        match self {
            HypothesisKind::OneSidedLower { .. } => "one_sided_lower",
            HypothesisKind::OneSidedUpper { .. } => "one_sided_upper",
            HypothesisKind::TwoSided { .. } => "two_sided",
            HypothesisKind::Equivalence { .. } => "equivalence",
        }
    }

    /// A boundary value at which the null holds; used to build null
    /// processes for type I error checks.
    pub fn null_boundary(&self) -> f64 {
        match *self {
            HypothesisKind::OneSidedLower { theta0 }
            | HypothesisKind::OneSidedUpper { theta0 }
            | HypothesisKind::TwoSided { theta0 } => theta0,
            HypothesisKind::Equivalence { theta0_upper, .. } => theta0_upper,
        }
    }
}

/// Hypothesis plus significance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    #[serde(flatten)]
    pub kind: HypothesisKind,
    pub alpha: Probability,
}

impl HypothesisSpec {
    pub fn new(kind: HypothesisKind, alpha: f64) -> Result<Self, PValueError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(PValueError::InvalidAlpha(alpha));
        }
        match kind {
            HypothesisKind::Equivalence {
                theta0_lower,
                theta0_upper,
            } => {
                if !(theta0_lower.is_finite() && theta0_upper.is_finite()) {
                    return Err(PValueError::NonFinite);
                }
                if theta0_lower >= theta0_upper {
                    return Err(PValueError::InvalidBounds {
                        lower: theta0_lower,
                        upper: theta0_upper,
                    });
                }
            }
            HypothesisKind::OneSidedLower { theta0 }
            | HypothesisKind::OneSidedUpper { theta0 }
            | HypothesisKind::TwoSided { theta0 } => {
                if !theta0.is_finite() {
                    return Err(PValueError::NonFinite);
                }
            }
        }
        Ok(Self {
            kind,
            alpha: Probability::new(alpha).map_err(|_| PValueError::InvalidAlpha(alpha))?,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.value()
    }
}

/// A p-value together with its one-sided constituents for equivalence tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PValueParts {
    pub p: f64,
    /// (p for H₀: θ ≤ θ₀,L, p for H₀: θ ≥ θ₀,U); equivalence only.
    pub tails: Option<(f64, f64)>,
}

/// p for H₀: θ ≤ θ₀, i.e. 1 − Φ(z), evaluated as Φ(−z) to keep precision in
/// the small tail.
#[inline]
fn upper_tail(z: f64) -> f64 {
    std_normal_cdf(-z)
}

pub fn p_value_parts(est: &EstimateResult, kind: &HypothesisKind) -> Result<PValueParts, PValueError> {
    if !est.converged || !(est.se > 0.0) || !est.se.is_finite() {
        return Err(PValueError::NotConverged { se: est.se });
    }
    let z = |theta0: f64| (est.theta_hat - theta0) / est.se;
    Ok(match *kind {
        HypothesisKind::OneSidedLower { theta0 } => PValueParts {
            p: upper_tail(z(theta0)),
            tails: None,
        },
        HypothesisKind::OneSidedUpper { theta0 } => PValueParts {
            p: std_normal_cdf(z(theta0)),
            tails: None,
        },
        HypothesisKind::TwoSided { theta0 } => PValueParts {
            p: (2.0 * std_normal_cdf(-z(theta0).abs())).min(1.0),
            tails: None,
        },
        HypothesisKind::Equivalence {
            theta0_lower,
            theta0_upper,
        } => {
            let lower = upper_tail(z(theta0_lower));
            let upper = std_normal_cdf(z(theta0_upper));
            PValueParts {
                p: lower.max(upper),
                tails: Some((lower, upper)),
            }
        }
    })
}

/// p-value of a converged estimate under `h`.
pub fn p_value(est: &EstimateResult, h: &HypothesisSpec) -> Result<Probability, PValueError> {
    p_value_parts(est, &h.kind).map(|parts| Probability::saturating(parts.p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn est(theta_hat: f64, se: f64) -> EstimateResult {
        EstimateResult {
            theta_hat,
            se,
            converged: true,
            iterations: 1,
        }
    }

    fn p(e: &EstimateResult, kind: HypothesisKind) -> f64 {
        p_value(e, &HypothesisSpec::new(kind, 0.05).unwrap()).unwrap().value()
    }

    #[test]
    fn null_at_estimate() {
        let e = est(1.3, 0.2);
        assert_eq!(p(&e, HypothesisKind::TwoSided { theta0: 1.3 }), 1.0);
        assert_eq!(p(&e, HypothesisKind::OneSidedLower { theta0: 1.3 }), 0.5);
        assert_eq!(p(&e, HypothesisKind::OneSidedUpper { theta0: 1.3 }), 0.5);
    }

    #[test]
    fn two_sided_critical_value() {
        let e = est(1.959963985, 1.0);
        assert!((p(&e, HypothesisKind::TwoSided { theta0: 0.0 }) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn symmetric_equivalence() {
        let e = est(0.0, 0.5);
        let kind = HypothesisKind::Equivalence {
            theta0_lower: -1.0,
            theta0_upper: 1.0,
        };
        let parts = p_value_parts(&e, &kind).unwrap();
        let (l, u) = parts.tails.unwrap();
        assert!((l - u).abs() < 1e-16);
        assert!((parts.p - 0.022_750_131_948_179_2).abs() < 1e-12);
    }

    #[test]
    fn non_converged_is_rejected() {
        let mut e = est(0.0, 1.0);
        e.converged = false;
        let h = HypothesisSpec::new(HypothesisKind::TwoSided { theta0: 0.0 }, 0.05).unwrap();
        assert!(p_value(&e, &h).is_err());
        assert!(p_value(&est(0.0, 0.0), &h).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(HypothesisSpec::new(HypothesisKind::TwoSided { theta0: 0.0 }, 1.5).is_err());
        assert!(HypothesisSpec::new(HypothesisKind::TwoSided { theta0: 0.0 }, 0.0).is_err());
        let bad = HypothesisKind::Equivalence {
            theta0_lower: 1.0,
            theta0_upper: 1.0,
        };
        assert!(matches!(
            HypothesisSpec::new(bad, 0.05),
            Err(PValueError::InvalidBounds { .. })
        ));
    }

    proptest! {
        #[test]
        fn two_sided_is_twice_smaller_one_sided(theta in -5.0f64..5.0, se in 0.01f64..3.0, theta0 in -2.0f64..2.0) {
            let e = est(theta, se);
            let lower = p(&e, HypothesisKind::OneSidedLower { theta0 });
            let upper = p(&e, HypothesisKind::OneSidedUpper { theta0 });
            let two = p(&e, HypothesisKind::TwoSided { theta0 });
            prop_assert_eq!(two, (2.0 * lower.min(upper)).min(1.0));
        }

        #[test]
        fn equivalence_is_max_of_one_sided(theta in -3.0f64..3.0, se in 0.01f64..3.0, lo in -2.0f64..0.0, width in 0.01f64..3.0) {
            let e = est(theta, se);
            let hi = lo + width;
            let eq = p(&e, HypothesisKind::Equivalence { theta0_lower: lo, theta0_upper: hi });
            let l = p(&e, HypothesisKind::OneSidedLower { theta0: lo });
            let u = p(&e, HypothesisKind::OneSidedUpper { theta0: hi });
            prop_assert_eq!(eq, l.max(u));
        }
    }
}
