//! Point estimates and standard errors for the scalar estimand.
//!
//! Each analysis recipe is an M-estimator: difference in means, logistic
//! regression by Newton–Raphson, independence GEE (identity or log link)
//! with a cluster-robust sandwich covariance, or any of these wrapped in a
//! nonparametric ISU-level bootstrap for the standard error.

use crate::dgp::{Dataset, Isu};
use crate::linalg;
use crate::numeric::NORMAL_MAD_SCALE;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("dataset has no column named `{0}`")]
    MissingColumn(String),
    #[error("both arms need at least two observations (treated {treated}, control {control})")]
    SingleArm { treated: usize, control: usize },
    #[error("no observed rows")]
    Empty,
    #[error("bootstrap needs at least 2 resamples, got {0}")]
    TooFewResamples(usize),
}

/// Estimate of the scalar estimand with its standard error.
///
/// `converged` is only set when the fit converged *and* `se` is finite and
/// strictly positive; anything else must not be turned into a p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta_hat: f64,
    pub se: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl EstimateResult {
    fn from_fit(theta_hat: f64, se: f64, fit_converged: bool, iterations: usize) -> Self {
        let converged = fit_converged && theta_hat.is_finite() && se.is_finite() && se > 0.0;
        Self {
            theta_hat,
            se,
            converged,
            iterations,
        }
    }
}

/// Link function for the independence GEE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Gaussian working variance.
    Identity,
    /// Poisson working variance.
    Log,
}

/// Adjustment of the sandwich meat for few ISUs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandwichCorrection {
    /// Raw residuals.
    #[default]
    None,
    /// Residuals premultiplied by `(I − Hᵢ)⁻¹`, `Hᵢ` the ISU's leverage block
    /// (Mancl and DeRouen, 2001).
    ManclDerouen,
}

/// Analysis recipe applied to each simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case", deny_unknown_fields)]
pub enum Analysis {
    /// Treated minus control mean, unpooled Wald standard error.
    MeanDiff,
    /// Logistic regression; the estimand is the coefficient of `coef`.
    Logistic { coef: String },
    /// Independence GEE; the estimand is the coefficient of `coef`.
    Gee {
        link: Link,
        coef: String,
        #[serde(default)]
        correction: SandwichCorrection,
    },
    /// Point estimate from `inner`, standard error from a cluster bootstrap.
    Bootstrap { resamples: usize, inner: Box<Analysis> },
}

impl Analysis {
    /// Checks that the recipe can run on datasets with these columns.
    pub fn validate(&self, columns: &[&str]) -> Result<(), EstimationError> {
        let need = |name: &str| {
            if columns.contains(&name) {
                Ok(())
            } else {
                Err(EstimationError::MissingColumn(name.to_string()))
            }
        };
        match self {
            Analysis::MeanDiff => need("arm"),
            Analysis::Logistic { coef } | Analysis::Gee { coef, .. } => need(coef),
            Analysis::Bootstrap { resamples, inner } => {
                if *resamples < 2 {
                    return Err(EstimationError::TooFewResamples(*resamples));
                }
                inner.validate(columns)
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Analysis::MeanDiff => "mean_diff".into(),
            Analysis::Logistic { .. } => "logistic".into(),
            Analysis::Gee { link: Link::Identity, .. } => "gee_identity".into(),
            Analysis::Gee { link: Link::Log, .. } => "gee_log".into(),
            Analysis::Bootstrap { inner, .. } => format!("bootstrap({})", inner.name()),
        }
    }

    /// Runs the recipe. `rng` is only consumed by resampling recipes.
    pub fn estimate<R: Rng + ?Sized>(&self, data: &Dataset, rng: &mut R) -> Result<EstimateResult, EstimationError> {
        let units: Vec<&Isu> = data.isus.iter().collect();
        self.estimate_units(data.columns, &units, rng)
    }

    fn estimate_units<R: Rng + ?Sized>(
        &self,
        columns: &[&str],
        units: &[&Isu],
        rng: &mut R,
    ) -> Result<EstimateResult, EstimationError> {
        match self {
            Analysis::MeanDiff => mean_diff_units(columns, units),
            Analysis::Logistic { coef } => logistic_units(columns, units, coef),
            Analysis::Gee { link, coef, correction } => {
                let k = column_index(columns, coef)?;
                let fit = fit_gee_units(columns.len(), units, *link, *correction)?;
                Ok(EstimateResult::from_fit(
                    fit.beta[k],
                    fit.sandwich_se(k),
                    fit.converged,
                    fit.iterations,
                ))
            }
            Analysis::Bootstrap { resamples, inner } => bootstrap_units(columns, units, inner, *resamples, rng),
        }
    }
}

fn column_index(columns: &[&str], name: &str) -> Result<usize, EstimationError> {
    columns
        .iter()
        .position(|c| *c == name)
        .ok_or_else(|| EstimationError::MissingColumn(name.to_string()))
}

// ---------------------------------------------------------------------------
// Difference in means
// ---------------------------------------------------------------------------

pub fn estimate_mean_diff(data: &Dataset) -> Result<EstimateResult, EstimationError> {
    let units: Vec<&Isu> = data.isus.iter().collect();
    mean_diff_units(data.columns, &units)
}

fn mean_diff_units(columns: &[&str], units: &[&Isu]) -> Result<EstimateResult, EstimationError> {
    let arm = column_index(columns, "arm")?;
    // Welford accumulators per arm: (count, mean, sum of squared deviations).
    let mut acc = [(0usize, 0.0f64, 0.0f64); 2];
    for isu in units {
        for j in isu.observed_rows() {
            let a = &mut acc[usize::from(isu.row(j)[arm] == 1.0)];
            a.0 += 1;
            let delta = isu.y[j] - a.1;
            a.1 += delta / a.0 as f64;
            a.2 += delta * (isu.y[j] - a.1);
        }
    }
    let [(nc, mc, ssc), (nt, mt, sst)] = acc;
    if nt < 2 || nc < 2 {
        return Err(EstimationError::SingleArm {
            treated: nt,
            control: nc,
        });
    }
    let var_t = sst / (nt - 1) as f64;
    let var_c = ssc / (nc - 1) as f64;
    let se = (var_t / nt as f64 + var_c / nc as f64).sqrt();
    Ok(EstimateResult::from_fit(mt - mc, se, true, 0))
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

const LOGISTIC_MAX_ITER: usize = 50;
const LOGISTIC_SCORE_TOL: f64 = 1e-8;
const LOGISTIC_STEP_TOL: f64 = 1e-6;
const SEPARATION_BOUND: f64 = 30.0;
const MAX_HALVINGS: usize = 10;

/// Full logistic regression fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub beta: Vec<f64>,
    pub covariance: Vec<f64>,
    pub score: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

struct LogisticState {
    loglik: f64,
    score: Vec<f64>,
    info: Vec<f64>,
}

fn logistic_state(units: &[&Isu], beta: &[f64]) -> LogisticState {
    let p = beta.len();
    let mut score = vec![0.0; p];
    let mut info = vec![0.0; p * p];
    let mut loglik = 0.0;
    for isu in units {
        for j in isu.observed_rows() {
            let x = isu.row(j);
            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + isu.offset[j];
            let mu = crate::numeric::inv_logit(eta);
            let y = isu.y[j];
            // log(1 + e^eta) without overflow
            let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            loglik += y * eta - softplus;
            let r = y - mu;
            for (s, xi) in score.iter_mut().zip(x) {
                *s += xi * r;
            }
            linalg::add_outer(&mut info, x, mu * (1.0 - mu));
        }
    }
    LogisticState { loglik, score, info }
}

/// Newton–Raphson on the Bernoulli log-likelihood.
///
/// Converges when the largest score component is below 1e-8 and the Newton
/// step has shrunk below 1e-6; a coefficient leaving [-30, 30] is treated
/// as separation and reported as non-converged.
pub fn fit_logistic(data: &Dataset) -> Result<LogisticFit, EstimationError> {
    let units: Vec<&Isu> = data.isus.iter().collect();
    fit_logistic_units(data.n_columns(), &units)
}

fn fit_logistic_units(p: usize, units: &[&Isu]) -> Result<LogisticFit, EstimationError> {
    if units.iter().all(|u| u.observed_rows().next().is_none()) {
        return Err(EstimationError::Empty);
    }
    let mut beta = vec![0.0; p];
    let mut state = logistic_state(units, &beta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < LOGISTIC_MAX_ITER {
        let Some(l) = linalg::cholesky(&state.info, p) else {
            break;
        };
        let mut step = state.score.clone();
        linalg::cholesky_solve(&l, p, &mut step);
        let max_score = state.score.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let max_step = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if max_score < LOGISTIC_SCORE_TOL && max_step < LOGISTIC_STEP_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let mut scale = 1.0;
        let mut candidate;
        let mut next;
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect::<Vec<_>>();
            next = logistic_state(units, &candidate);
            if next.loglik >= state.loglik - 1e-12 * state.loglik.abs() || halvings == MAX_HALVINGS {
                break;
            }
            scale *= 0.5;
            halvings += 1;
        }
        beta = candidate;
        state = next;
        if beta.iter().any(|b| !b.is_finite() || b.abs() > SEPARATION_BOUND) {
            break;
        }
    }
    let covariance = linalg::spd_inverse(&state.info, p).unwrap_or_else(|| vec![f64::NAN; p * p]);
    Ok(LogisticFit {
        beta,
        covariance,
        score: state.score,
        converged,
        iterations,
    })
}

pub fn estimate_logistic(data: &Dataset, coef: &str) -> Result<EstimateResult, EstimationError> {
    let units: Vec<&Isu> = data.isus.iter().collect();
    logistic_units(data.columns, &units, coef)
}

fn logistic_units(columns: &[&str], units: &[&Isu], coef: &str) -> Result<EstimateResult, EstimationError> {
    let k = column_index(columns, coef)?;
    let p = columns.len();
    let fit = fit_logistic_units(p, units)?;
    let se = fit.covariance[k * p + k].sqrt();
    Ok(EstimateResult::from_fit(fit.beta[k], se, fit.converged, fit.iterations))
}

// ---------------------------------------------------------------------------
// Independence GEE with sandwich covariance
// ---------------------------------------------------------------------------

const GEE_MAX_ITER: usize = 100;
const GEE_STEP_TOL: f64 = 1e-10;

/// Independence-working-correlation GEE fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GeeFit {
    pub beta: Vec<f64>,
    /// A⁻¹ B A⁻¹ with B summed over ISUs.
    pub sandwich_cov: Vec<f64>,
    /// A⁻¹, the model-based covariance.
    pub model_cov: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl GeeFit {
    pub fn sandwich_se(&self, k: usize) -> f64 {
        let p = self.beta.len();
        self.sandwich_cov[k * p + k].sqrt()
    }

    pub fn model_se(&self, k: usize) -> f64 {
        let p = self.beta.len();
        self.model_cov[k * p + k].sqrt()
    }
}

#[inline]
fn linear_predictor(x: &[f64], beta: &[f64], offset: f64) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + offset
}

#[inline]
fn mean_of(eta: f64, link: Link) -> f64 {
    match link {
        Link::Identity => eta,
        Link::Log => eta.exp(),
    }
}

// Quasi-deviance of the working model: residual sum of squares or Poisson
// deviance.
fn quasi_deviance(units: &[&Isu], beta: &[f64], link: Link) -> f64 {
    let mut dev = 0.0;
    for isu in units {
        for j in isu.observed_rows() {
            let mu = mean_of(linear_predictor(isu.row(j), beta, isu.offset[j]), link);
            let y = isu.y[j];
            dev += match link {
                Link::Identity => (y - mu).powi(2),
                Link::Log => {
                    let term = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
                    2.0 * (term - (y - mu))
                }
            };
        }
    }
    dev
}

/// Solves the independence estimating equations `Σᵢ Xᵢᵀ(yᵢ − μᵢ) = 0` by
/// Fisher scoring with step halving on the quasi-deviance.
pub fn fit_gee(data: &Dataset, link: Link) -> Result<GeeFit, EstimationError> {
    fit_gee_corrected(data, link, SandwichCorrection::None)
}

pub fn fit_gee_corrected(data: &Dataset, link: Link, correction: SandwichCorrection) -> Result<GeeFit, EstimationError> {
    let units: Vec<&Isu> = data.isus.iter().collect();
    fit_gee_units(data.n_columns(), &units, link, correction)
}

fn fit_gee_units(p: usize, units: &[&Isu], link: Link, correction: SandwichCorrection) -> Result<GeeFit, EstimationError> {
    let rows: usize = units.iter().map(|u| u.observed_rows().count()).sum();
    if rows == 0 {
        return Err(EstimationError::Empty);
    }
    let mut beta = vec![0.0; p];
    if link == Link::Log {
        // Start at the pooled log rate, assuming column 0 is the intercept.
        let (mut ys, mut exposure) = (0.0, 0.0);
        for isu in units {
            for j in isu.observed_rows() {
                ys += isu.y[j];
                exposure += isu.offset[j].exp();
            }
        }
        beta[0] = (ys / exposure).ln();
    }

    let mut converged = false;
    let mut iterations = 0;
    let mut deviance = quasi_deviance(units, &beta, link);
    let mut a = vec![0.0; p * p];
    let mut u = vec![0.0; p];
    while iterations < GEE_MAX_ITER {
        if beta.iter().any(|b| !b.is_finite()) {
            break;
        }
        a.iter_mut().for_each(|v| *v = 0.0);
        u.iter_mut().for_each(|v| *v = 0.0);
        for isu in units {
            for j in isu.observed_rows() {
                let x = isu.row(j);
                let mu = mean_of(linear_predictor(x, &beta, isu.offset[j]), link);
                let w = match link {
                    Link::Identity => 1.0,
                    Link::Log => mu,
                };
                let r = isu.y[j] - mu;
                for (ui, xi) in u.iter_mut().zip(x) {
                    *ui += xi * r;
                }
                linalg::add_outer(&mut a, x, w);
            }
        }
        let Some(l) = linalg::cholesky(&a, p) else {
            break;
        };
        let mut step = u.clone();
        linalg::cholesky_solve(&l, p, &mut step);
        iterations += 1;

        let mut scale = 1.0;
        let mut candidate = beta.clone();
        for _ in 0..=MAX_HALVINGS {
            for ((c, b), s) in candidate.iter_mut().zip(&beta).zip(&step) {
                *c = b + scale * s;
            }
            let dev = quasi_deviance(units, &candidate, link);
            if dev.is_finite() && dev <= deviance * (1.0 + 1e-12) + 1e-300 {
                deviance = dev;
                break;
            }
            scale *= 0.5;
        }
        let max_rel = step
            .iter()
            .zip(&beta)
            .fold(0.0f64, |m, (s, b)| m.max((scale * s).abs() / (1.0 + b.abs())));
        beta.clone_from(&candidate);
        if max_rel < GEE_STEP_TOL {
            converged = true;
            break;
        }
    }

    // Bread and meat at the final estimate.
    let mut bread = vec![0.0; p * p];
    for isu in units {
        for j in isu.observed_rows() {
            let x = isu.row(j);
            let mu = mean_of(linear_predictor(x, &beta, isu.offset[j]), link);
            let w = match link {
                Link::Identity => 1.0,
                Link::Log => mu,
            };
            linalg::add_outer(&mut bread, x, w);
        }
    }
    let Some(model_cov) = linalg::spd_inverse(&bread, p) else {
        return Ok(GeeFit {
            beta,
            sandwich_cov: vec![f64::NAN; p * p],
            model_cov: vec![f64::NAN; p * p],
            converged: false,
            iterations,
        });
    };
    let mut meat = vec![0.0; p * p];
    let mut s = vec![0.0; p];
    let mut rows_x: Vec<f64> = Vec::new();
    let mut w = Vec::new();
    let mut r = Vec::new();
    for isu in units {
        rows_x.clear();
        w.clear();
        r.clear();
        for j in isu.observed_rows() {
            let x = isu.row(j);
            let mu = mean_of(linear_predictor(x, &beta, isu.offset[j]), link);
            rows_x.extend_from_slice(x);
            w.push(match link {
                Link::Identity => 1.0,
                Link::Log => mu,
            });
            r.push(isu.y[j] - mu);
        }
        let m = r.len();
        if correction == SandwichCorrection::ManclDerouen && m > 0 {
            // I − diag(w) X A⁻¹ Xᵀ
            let mut ax = vec![0.0; m * p];
            for i in 0..m {
                for c in 0..p {
                    ax[i * p + c] = (0..p).map(|k| model_cov[c * p + k] * rows_x[i * p + k]).sum();
                }
            }
            let mut ih = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    let h: f64 = (0..p).map(|c| rows_x[i * p + c] * ax[j * p + c]).sum();
                    ih[i * m + j] = f64::from(u8::from(i == j)) - w[i] * h;
                }
            }
            if !linalg::lu_solve(&mut ih, m, &mut r) {
                converged = false;
            }
        }
        s.iter_mut().for_each(|v| *v = 0.0);
        for (i, ri) in r.iter().enumerate() {
            for (c, sc) in s.iter_mut().enumerate() {
                *sc += rows_x[i * p + c] * ri;
            }
        }
        linalg::add_outer(&mut meat, &s, 1.0);
    }
    let sandwich_cov = linalg::sandwich(&model_cov, &meat, p);
    if link == Link::Identity {
        // The model-based covariance carries the residual variance.
        let dev = quasi_deviance(units, &beta, link);
        let dof = rows.saturating_sub(p).max(1) as f64;
        let scale = dev / dof;
        return Ok(GeeFit {
            beta,
            sandwich_cov,
            model_cov: model_cov.into_iter().map(|v| v * scale).collect(),
            converged,
            iterations,
        });
    }
    Ok(GeeFit {
        beta,
        sandwich_cov,
        model_cov,
        converged,
        iterations,
    })
}

pub fn estimate_gee(data: &Dataset, link: Link, coef: &str) -> Result<EstimateResult, EstimationError> {
    Analysis::Gee {
        link,
        coef: coef.to_string(),
        correction: SandwichCorrection::None,
    }
    .estimate(data, &mut rand::rngs::mock::StepRng::new(0, 0))
}

// ---------------------------------------------------------------------------
// Cluster bootstrap
// ---------------------------------------------------------------------------

/// Largest tolerated share of failed inner fits among bootstrap resamples.
pub const BOOTSTRAP_MAX_FAILURE_SHARE: f64 = 0.2;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Normal-consistent scale from the median absolute deviation about the
/// median: `median |x − median(x)| / Φ⁻¹(0.75)`.
pub fn mad_se(estimates: &[f64]) -> f64 {
    if estimates.is_empty() {
        return f64::NAN;
    }
    let mut v = estimates.to_vec();
    let centre = median(&mut v);
    let mut dev: Vec<f64> = estimates.iter().map(|x| (x - centre).abs()).collect();
    median(&mut dev) / NORMAL_MAD_SCALE
}

/// Resamples ISUs with replacement `resamples` times and re-estimates with
/// `inner`; the point estimate comes from the original data.
pub fn bootstrap_se<R: Rng + ?Sized>(
    data: &Dataset,
    inner: &Analysis,
    resamples: usize,
    rng: &mut R,
) -> Result<EstimateResult, EstimationError> {
    let units: Vec<&Isu> = data.isus.iter().collect();
    bootstrap_units(data.columns, &units, inner, resamples, rng)
}

fn bootstrap_units<R: Rng + ?Sized>(
    columns: &[&str],
    units: &[&Isu],
    inner: &Analysis,
    resamples: usize,
    rng: &mut R,
) -> Result<EstimateResult, EstimationError> {
    if resamples < 2 {
        return Err(EstimationError::TooFewResamples(resamples));
    }
    if units.is_empty() {
        return Err(EstimationError::Empty);
    }
    let original = inner.estimate_units(columns, units, rng)?;
    let n = units.len();
    let mut draws = Vec::with_capacity(resamples);
    let mut failures = 0usize;
    let mut resample: Vec<&Isu> = Vec::with_capacity(n);
    for _ in 0..resamples {
        resample.clear();
        resample.extend((0..n).map(|_| units[rng.gen_range(0..n)]));
        match inner.estimate_units(columns, &resample, rng) {
            Ok(r) if r.theta_hat.is_finite() && (r.converged || r.se == 0.0) => draws.push(r.theta_hat),
            _ => failures += 1,
        }
    }
    let fits_ok = (failures as f64) <= BOOTSTRAP_MAX_FAILURE_SHARE * resamples as f64;
    let theta_ok = original.theta_hat.is_finite() && (original.converged || original.se == 0.0);
    let se = mad_se(&draws);
    Ok(EstimateResult::from_fit(original.theta_hat, se, fits_ok && theta_ok, draws.len()))
}
