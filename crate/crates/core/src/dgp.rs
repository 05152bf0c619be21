//! Data-generating processes.
//!
//! A [`Scenario`] bundles one fully specified process: the model parameters,
//! the nuisance parameters that only matter for simulation (allocation,
//! dropout, latent dependence), the true value of the estimand, and the
//! analysis recipe applied to each simulated dataset.

use crate::estimators::Analysis;
use crate::numeric::{inv_logit, std_normal_cdf};
use crate::rng::{bernoulli, standard_normal, CorrelationFactor, SamplingError};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DgpError {
    #[error("scenario `{scenario}`: {message}")]
    InvalidParameter { scenario: String, message: String },
    #[error("scenario `{scenario}`: true_theta {given} does not match the value {implied} implied by eta")]
    ThetaMismatch {
        scenario: String,
        given: f64,
        implied: f64,
    },
    #[error("scenario `{scenario}`: dropout model references unknown covariate `{name}` (available: previous_response, baseline, time, treatment)")]
    UnknownDropoutCovariate { scenario: String, name: String },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// One independent sampling unit: an aligned response vector, design matrix
/// (row-major, one row per response), offset vector and observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Isu {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub offset: Vec<f64>,
    pub observed: Vec<bool>,
}

impl Isu {
    pub fn rows(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        let p = self.x.len() / self.y.len();
        &self.x[j * p..(j + 1) * p]
    }

    /// Indices of rows that enter the analysis.
    pub fn observed_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.rows()).filter(move |&j| self.observed[j])
    }

    pub fn is_monotone(&self) -> bool {
        self.observed.windows(2).all(|w| w[0] || !w[1])
    }
}

/// `n` independent sampling units sharing one set of named design columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: &'static [&'static str],
    pub isus: Vec<Isu>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.isus.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }
}

pub const TWO_ARM_COLUMNS: &[&str] = &["intercept", "arm"];
pub const CLUSTERED_COLUMNS: &[&str] = &["intercept", "baseline", "arm", "time"];
pub const POISSON_COLUMNS: &[&str] = &["intercept", "post", "arm_post"];

// ---------------------------------------------------------------------------
// Family parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoArmNormalEta {
    pub mean_difference: f64,
    pub control_mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationRho {
    pub allocation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoArmBinaryEta {
    pub intercept: f64,
    pub treatment_log_odds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteredEta {
    pub intercept: f64,
    pub baseline_coef: f64,
    pub treatment_effect: f64,
    pub time_slope: f64,
    pub sd_intercept: f64,
    pub sd_slope: f64,
    pub sd_residual: f64,
}

/// Covariates a dropout hazard may depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutCovariate {
    /// Response observed at the previous post-baseline visit.
    PreviousResponse,
    Baseline,
    /// Time of the current visit.
    Time,
    Treatment,
}

impl DropoutCovariate {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "previous_response" => Self::PreviousResponse,
            "baseline" => Self::Baseline,
            "time" => Self::Time,
            "treatment" => Self::Treatment,
            _ => return None,
        })
    }
}

/// Logistic per-visit dropout hazard, applied from the second post-baseline
/// visit onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutModel {
    pub intercept: f64,
    #[serde(default)]
    pub terms: Vec<(DropoutCovariate, f64)>,
}

impl DropoutModel {
    pub fn none() -> Self {
        Self {
            intercept: -30.0,
            terms: Vec::new(),
        }
    }

    /// Builds a model from covariate names, rejecting names the process
    /// cannot supply.
    pub fn from_named(
        scenario: &str,
        intercept: f64,
        terms: &[(String, f64)],
    ) -> Result<Self, DgpError> {
        let terms = terms
            .iter()
            .map(|(name, coef)| {
                DropoutCovariate::from_name(name)
                    .map(|c| (c, *coef))
                    .ok_or_else(|| DgpError::UnknownDropoutCovariate {
                        scenario: scenario.to_string(),
                        name: name.clone(),
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { intercept, terms })
    }

    fn hazard(&self, previous: f64, baseline: f64, time: f64, arm: f64) -> f64 {
        let lp = self.terms.iter().fold(self.intercept, |acc, (cov, coef)| {
            let v = match cov {
                DropoutCovariate::PreviousResponse => previous,
                DropoutCovariate::Baseline => baseline,
                DropoutCovariate::Time => time,
                DropoutCovariate::Treatment => arm,
            };
            acc + coef * v
        });
        inv_logit(lp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteredRho {
    pub allocation: f64,
    /// Number of post-baseline visits.
    pub visits: usize,
    /// Time between consecutive visits.
    pub visit_spacing: f64,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    pub dropout: DropoutModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonEta {
    /// Log event rate per unit time in the pre-baseline period.
    pub intercept: f64,
    /// Log rate ratio, post- versus pre-baseline, in the reference arm.
    pub post_effect: f64,
    /// Log rate ratio of the treated versus reference arm post-baseline.
    pub log_rate_ratio: f64,
}

/// Latent Gaussian copula dependence across the periods of one ISU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Copula {
    Independent,
    Exchangeable { rho: f64 },
    Ar1 { rho: f64 },
    /// Full row-major correlation matrix over all `1 + post_periods` periods.
    Unstructured { matrix: Vec<f64> },
}

impl Copula {
    pub fn correlation_matrix(&self, dim: usize) -> Vec<f64> {
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                m[i * dim + j] = if i == j {
                    1.0
                } else {
                    match self {
                        Copula::Independent => 0.0,
                        Copula::Exchangeable { rho } => *rho,
                        Copula::Ar1 { rho } => rho.powi((i as i32 - j as i32).abs()),
                        Copula::Unstructured { matrix } => matrix.get(i * dim + j).copied().unwrap_or(f64::NAN),
                    }
                };
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonRho {
    pub allocation: f64,
    /// Length of the single pre-baseline period.
    pub pre_length: f64,
    pub post_periods: usize,
    pub post_length: f64,
    pub copula: Copula,
    /// Variance of the mean-one gamma multiplier on each count's rate.
    #[serde(default)]
    pub overdispersion: f64,
}

/// The supported process families with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    TwoArmNormal { eta: TwoArmNormalEta, rho: AllocationRho },
    TwoArmBinary { eta: TwoArmBinaryEta, rho: AllocationRho },
    ClusteredGaussianDropout { eta: ClusteredEta, rho: ClusteredRho },
    LongitudinalPoissonCopula { eta: PoissonEta, rho: PoissonRho },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::TwoArmNormal { .. } => "two_arm_normal",
            Family::TwoArmBinary { .. } => "two_arm_binary",
            Family::ClusteredGaussianDropout { .. } => "clustered_gaussian_dropout",
            Family::LongitudinalPoissonCopula { .. } => "longitudinal_poisson_copula",
        }
    }

    /// The estimand implied by the model parameters.
    pub fn implied_theta(&self) -> f64 {
        match self {
            Family::TwoArmNormal { eta, .. } => eta.mean_difference,
            Family::TwoArmBinary { eta, .. } => eta.treatment_log_odds,
            Family::ClusteredGaussianDropout { eta, .. } => eta.treatment_effect,
            Family::LongitudinalPoissonCopula { eta, .. } => eta.log_rate_ratio,
        }
    }

    fn set_theta(&mut self, theta: f64) {
        match self {
            Family::TwoArmNormal { eta, .. } => eta.mean_difference = theta,
            Family::TwoArmBinary { eta, .. } => eta.treatment_log_odds = theta,
            Family::ClusteredGaussianDropout { eta, .. } => eta.treatment_effect = theta,
            Family::LongitudinalPoissonCopula { eta, .. } => eta.log_rate_ratio = theta,
        }
    }

    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            Family::TwoArmNormal { .. } | Family::TwoArmBinary { .. } => TWO_ARM_COLUMNS,
            Family::ClusteredGaussianDropout { .. } => CLUSTERED_COLUMNS,
            Family::LongitudinalPoissonCopula { .. } => POISSON_COLUMNS,
        }
    }
}

/// A fully specified data-generating process plus its analysis recipe.
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    label: String,
    family: Family,
    true_theta: f64,
    analysis: Analysis,
    copula_factor: Option<CorrelationFactor>,
}

// Upper bound on the expected count in one period; keeps the summed-pmf
// inverse CDF away from underflow of P(0).
const MAX_PERIOD_MEAN: f64 = 500.0;

impl Scenario {
    pub fn new(
        label: impl Into<String>,
        family: Family,
        true_theta: f64,
        analysis: Analysis,
    ) -> Result<Self, DgpError> {
        let label = label.into();
        let implied = family.implied_theta();
        if true_theta != implied {
            return Err(DgpError::ThetaMismatch {
                scenario: label,
                given: true_theta,
                implied,
            });
        }
        let invalid = |message: String| DgpError::InvalidParameter {
            scenario: label.clone(),
            message,
        };
        let check_alloc = |a: f64| {
            if a > 0.0 && a < 1.0 {
                Ok(())
            } else {
                Err(invalid(format!("allocation {a} must lie in (0, 1)")))
            }
        };
        let mut copula_factor = None;
        match &family {
            Family::TwoArmNormal { eta, rho } => {
                if !(eta.sigma > 0.0) {
                    return Err(invalid(format!("sigma {} must be > 0", eta.sigma)));
                }
                if !eta.control_mean.is_finite() || !eta.mean_difference.is_finite() {
                    return Err(invalid("means must be finite".into()));
                }
                check_alloc(rho.allocation)?;
            }
            Family::TwoArmBinary { eta, rho } => {
                if !eta.intercept.is_finite() || !eta.treatment_log_odds.is_finite() {
                    return Err(invalid("coefficients must be finite".into()));
                }
                check_alloc(rho.allocation)?;
            }
            Family::ClusteredGaussianDropout { eta, rho } => {
                check_alloc(rho.allocation)?;
                if rho.visits < 2 {
                    return Err(invalid(format!("visits {} must be >= 2", rho.visits)));
                }
                if !(eta.sd_intercept >= 0.0 && eta.sd_slope >= 0.0) {
                    return Err(invalid("random-effect SDs must be >= 0".into()));
                }
                if !(eta.sd_residual > 0.0) {
                    return Err(invalid(format!("sd_residual {} must be > 0", eta.sd_residual)));
                }
                if !(rho.baseline_sd >= 0.0) || !(rho.visit_spacing > 0.0) {
                    return Err(invalid("baseline_sd must be >= 0 and visit_spacing > 0".into()));
                }
            }
            Family::LongitudinalPoissonCopula { eta, rho } => {
                check_alloc(rho.allocation)?;
                if rho.post_periods < 1 {
                    return Err(invalid("post_periods must be >= 1".into()));
                }
                if !(rho.pre_length > 0.0 && rho.post_length > 0.0) {
                    return Err(invalid("period lengths must be > 0".into()));
                }
                if !(rho.overdispersion >= 0.0) {
                    return Err(invalid("overdispersion must be >= 0".into()));
                }
                let worst = [
                    eta.intercept + rho.pre_length.ln(),
                    eta.intercept + eta.post_effect + rho.post_length.ln(),
                    eta.intercept + eta.post_effect + eta.log_rate_ratio + rho.post_length.ln(),
                ]
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
                .exp();
                if !(worst <= MAX_PERIOD_MEAN) {
                    return Err(invalid(format!(
                        "expected count per period {worst} exceeds {MAX_PERIOD_MEAN}"
                    )));
                }
                let dim = 1 + rho.post_periods;
                let factor = match &rho.copula {
                    Copula::Independent => CorrelationFactor::identity(dim),
                    copula => {
                        if let Copula::Unstructured { matrix } = copula {
                            if matrix.len() != dim * dim {
                                return Err(invalid(format!(
                                    "unstructured copula matrix has {} entries, expected {}",
                                    matrix.len(),
                                    dim * dim
                                )));
                            }
                        }
                        CorrelationFactor::new(&copula.correlation_matrix(dim), dim, &label)?
                    }
                };
                copula_factor = Some(factor);
            }
        }
        Ok(Self {
            label,
            family,
            true_theta,
            analysis,
            copula_factor,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn true_theta(&self) -> f64 {
        self.true_theta
    }

    pub fn analysis(&self) -> &Analysis {
        &self.analysis
    }

    /// The same process with the estimand moved to `theta`, e.g. a null
    /// process at a hypothesis boundary.
    pub fn with_true_theta(&self, theta: f64) -> Result<Self, DgpError> {
        let mut family = self.family.clone();
        family.set_theta(theta);
        Scenario::new(self.label.clone(), family, theta, self.analysis.clone())
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Generates `n` independent sampling units.
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        match &self.family {
            Family::TwoArmNormal { eta, rho } => gen_two_arm_normal(eta, rho, n, rng),
            Family::TwoArmBinary { eta, rho } => gen_two_arm_binary(eta, rho, n, rng),
            Family::ClusteredGaussianDropout { eta, rho } => gen_clustered_gaussian_dropout(eta, rho, n, rng),
            Family::LongitudinalPoissonCopula { eta, rho } => {
                let factor = self
                    .copula_factor
                    .as_ref()
                    .expect("copula factor is built at construction");
                gen_longitudinal_poisson_copula(eta, rho, factor, n, rng)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

fn single_row_isu(y: f64, arm: f64) -> Isu {
    Isu {
        y: vec![y],
        x: vec![1.0, arm],
        offset: vec![0.0],
        observed: vec![true],
    }
}

pub fn gen_two_arm_normal<R: Rng + ?Sized>(
    eta: &TwoArmNormalEta,
    rho: &AllocationRho,
    n: usize,
    rng: &mut R,
) -> Dataset {
    let isus = (0..n)
        .map(|_| {
            let arm = if bernoulli(rho.allocation, rng) { 1.0 } else { 0.0 };
            let z = standard_normal(rng);
            single_row_isu(eta.control_mean + arm * eta.mean_difference + eta.sigma * z, arm)
        })
        .collect();
    Dataset {
        columns: TWO_ARM_COLUMNS,
        isus,
    }
}

pub fn gen_two_arm_binary<R: Rng + ?Sized>(
    eta: &TwoArmBinaryEta,
    rho: &AllocationRho,
    n: usize,
    rng: &mut R,
) -> Dataset {
    let isus = (0..n)
        .map(|_| {
            let arm = if bernoulli(rho.allocation, rng) { 1.0 } else { 0.0 };
            let p = inv_logit(eta.intercept + arm * eta.treatment_log_odds);
            let y = if bernoulli(p, rng) { 1.0 } else { 0.0 };
            single_row_isu(y, arm)
        })
        .collect();
    Dataset {
        columns: TWO_ARM_COLUMNS,
        isus,
    }
}

pub fn gen_clustered_gaussian_dropout<R: Rng + ?Sized>(
    eta: &ClusteredEta,
    rho: &ClusteredRho,
    n: usize,
    rng: &mut R,
) -> Dataset {
    let visits = rho.visits;
    let p = CLUSTERED_COLUMNS.len();
    let isus = (0..n)
        .map(|_| {
            let arm = if bernoulli(rho.allocation, rng) { 1.0 } else { 0.0 };
            let baseline = rho.baseline_mean + rho.baseline_sd * standard_normal(rng);
            let b0 = eta.sd_intercept * standard_normal(rng);
            let b1 = eta.sd_slope * standard_normal(rng);
            let mut y = Vec::with_capacity(visits);
            let mut x = Vec::with_capacity(visits * p);
            let mut observed = Vec::with_capacity(visits);
            let mut in_study = true;
            for j in 0..visits {
                let t = (j + 1) as f64 * rho.visit_spacing;
                let mean = eta.intercept
                    + eta.baseline_coef * baseline
                    + eta.treatment_effect * arm
                    + eta.time_slope * t
                    + b0
                    + b1 * t;
                let response = mean + eta.sd_residual * standard_normal(rng);
                // The hazard is drawn for every visit so the stream layout does
                // not depend on earlier dropout.
                let u: f64 = rng.gen();
                if j > 0 && in_study {
                    let h = rho.dropout.hazard(y[j - 1], baseline, t, arm);
                    if u < h {
                        in_study = false;
                    }
                }
                y.push(response);
                x.extend_from_slice(&[1.0, baseline, arm, t]);
                observed.push(in_study);
            }
            Isu {
                y,
                x,
                offset: vec![0.0; visits],
                observed,
            }
        })
        .collect();
    Dataset {
        columns: CLUSTERED_COLUMNS,
        isus,
    }
}

/// Smallest `k` with `F(k) >= u` for a Poisson (`overdispersion = 0`) or
/// gamma-mixed Poisson (negative binomial) margin, by summing the pmf.
/// Capped at `mean + 20 sd`.
pub fn count_quantile(u: f64, mean: f64, overdispersion: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let var = mean + overdispersion * mean * mean;
    let cap = (mean + 20.0 * var.sqrt()).ceil();
    let (mut pmf, size, q) = if overdispersion > 0.0 {
        let size = 1.0 / overdispersion;
        let prob = size / (size + mean);
        (prob.powf(size), size, 1.0 - prob)
    } else {
        ((-mean).exp(), 0.0, 0.0)
    };
    let mut cdf = pmf;
    let mut k = 0.0;
    while cdf < u && k < cap {
        pmf *= if overdispersion > 0.0 {
            (k + size) / (k + 1.0) * q
        } else {
            mean / (k + 1.0)
        };
        k += 1.0;
        cdf += pmf;
    }
    k
}

pub fn gen_longitudinal_poisson_copula<R: Rng + ?Sized>(
    eta: &PoissonEta,
    rho: &PoissonRho,
    factor: &CorrelationFactor,
    n: usize,
    rng: &mut R,
) -> Dataset {
    let periods = 1 + rho.post_periods;
    debug_assert_eq!(factor.dim(), periods);
    let p = POISSON_COLUMNS.len();
    let mut latent = vec![0.0; periods];
    let mut scratch = Vec::with_capacity(periods);
    let isus = (0..n)
        .map(|_| {
            let arm = if bernoulli(rho.allocation, rng) { 1.0 } else { 0.0 };
            factor.sample_into(rng, &mut scratch, &mut latent);
            let mut y = Vec::with_capacity(periods);
            let mut x = Vec::with_capacity(periods * p);
            let mut offset = Vec::with_capacity(periods);
            for (j, z) in latent.iter().enumerate() {
                let post = if j == 0 { 0.0 } else { 1.0 };
                let length = if j == 0 { rho.pre_length } else { rho.post_length };
                let lp = eta.intercept + eta.post_effect * post + eta.log_rate_ratio * arm * post;
                let mean = (lp + length.ln()).exp();
                y.push(count_quantile(std_normal_cdf(*z), mean, rho.overdispersion));
                x.extend_from_slice(&[1.0, post, arm * post]);
                offset.push(length.ln());
            }
            Isu {
                y,
                x,
                offset,
                observed: vec![true; periods],
            }
        })
        .collect();
    Dataset {
        columns: POISSON_COLUMNS,
        isus,
    }
}
