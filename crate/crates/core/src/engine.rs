//! Simulation-based sample size determination.
//!
//! The expensive primitive is [`run_algorithm1`]: simulate `R` datasets of
//! size `n` from one scenario, analyse each, and keep the sorted p-values.
//! [`robust_ssd`] calls it at only two sample sizes per scenario. Joining
//! same-rank order statistics of the logit p-values at those two sizes with
//! straight lines gives a predicted p-value distribution, and hence a power
//! estimate, at every other `n`. The recommendation is the largest of the
//! per-scenario minimal sample sizes.

use crate::dgp::{DgpError, Scenario};
use crate::numeric::{inv_logit, logit, Probability};
use crate::pvalue::{p_value_parts, HypothesisKind, HypothesisSpec};
use crate::rng::{Purpose, RngStream, StreamPath};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attempts per repetition before a non-converged fit is counted as p = 1.
pub const MAX_ATTEMPTS: u32 = 5;
/// Largest tolerated share of repetitions that never converged.
pub const MAX_NONCONVERGED_SHARE: f64 = 0.05;
/// Smallest sample size the default search range will consider.
pub const MIN_SEARCH_N: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("scenario `{label}` at n = {n}: {failed} of {replications} repetitions failed to converge after {MAX_ATTEMPTS} attempts")]
    TooManyNonConverged {
        label: String,
        n: usize,
        failed: usize,
        replications: usize,
    },
    #[error("rank {rank} out of range for {len} values")]
    RankOutOfRange { rank: usize, len: usize },
    #[error("target unattainable in range [{lo}, {hi}]: power {power_lo:.4} at {lo}, {power_hi:.4} at {hi}")]
    Unattainable {
        lo: usize,
        hi: usize,
        power_lo: f64,
        power_hi: f64,
    },
    #[error("scenario `{label}`: {source}")]
    Scenario {
        label: String,
        #[source]
        source: Box<EngineError>,
    },
    #[error("n1 = {n1} violates the side rule at n0 = {n0} (power {power:.4} vs target {target:.4})")]
    SideRule {
        n0: usize,
        n1: usize,
        power: f64,
        target: f64,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Dgp(#[from] DgpError),
}

impl EngineError {
    fn in_scenario(self, label: &str) -> Self {
        match self {
            e @ EngineError::Scenario { .. } | e @ EngineError::TooManyNonConverged { .. } => e,
            other => EngineError::Scenario {
                label: label.to_string(),
                source: Box::new(other),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Runs per-repetition work serially or on a dedicated thread pool. Results
/// always come back in repetition order, so output never depends on the
/// worker count.
pub struct Executor {
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub fn new(workers: usize) -> Result<Self, EngineError> {
        if workers == 0 {
            return Err(EngineError::InvalidInput("worker count must be >= 1".into()));
        }
        if workers == 1 {
            return Ok(Self { pool: None });
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| EngineError::InvalidInput(format!("thread pool: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    pub fn serial() -> Self {
        Self { pool: None }
    }

    pub fn workers(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn map<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..count).map(f).collect(),
            Some(pool) => pool.install(|| (0..count).into_par_iter().map(f).collect()),
        }
    }
}

// ---------------------------------------------------------------------------
// Order statistics and power
// ---------------------------------------------------------------------------

/// The `rank`-th smallest value (1-based).
pub fn order_stat(rank: usize, values: &[f64]) -> Result<f64, EngineError> {
    if rank == 0 || rank > values.len() {
        return Err(EngineError::RankOutOfRange {
            rank,
            len: values.len(),
        });
    }
    let mut v = values.to_vec();
    let (_, nth, _) = v.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*nth)
}

/// Number of rejections out of `replications` needed for power ≥ `target`,
/// i.e. ⌈target·R⌉ guarded against representation error.
pub fn required_count(target: f64, replications: usize) -> usize {
    let raw = target * replications as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 * replications.max(1) as f64 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

pub fn rejection_count(p_values: &[f64], alpha: f64) -> usize {
    p_values.iter().filter(|&&p| p <= alpha).count()
}

/// R⁻¹ Σ 𝟙{p ≤ α}.
pub fn power_from_p(p_values: &[f64], alpha: f64) -> Probability {
    if p_values.is_empty() {
        return Probability::saturating(0.0);
    }
    Probability::saturating(rejection_count(p_values, alpha) as f64 / p_values.len() as f64)
}

/// Power ≥ target checked through the order statistic ξ(⌈target·R⌉, p) ≤ α.
pub fn meets_target_by_order_stat(p_values: &[f64], alpha: f64, target: f64) -> bool {
    let k = required_count(target, p_values.len());
    if k == 0 {
        return true;
    }
    match order_stat(k, p_values) {
        Ok(xi) => xi <= alpha,
        Err(_) => false,
    }
}

// ---------------------------------------------------------------------------
// Sampling distribution estimation
// ---------------------------------------------------------------------------

/// Estimated sampling distribution of p-values at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueSample {
    pub label: String,
    pub n: usize,
    /// Ascending.
    pub p_sorted: Vec<f64>,
    /// logit of the clipped `p_sorted`, elementwise.
    pub logits: Vec<f64>,
    /// Equivalence only: the one-sided constituents, each sorted ascending.
    pub tails_sorted: Option<(Vec<f64>, Vec<f64>)>,
    /// Repetitions still non-converged after every attempt (counted as p = 1).
    pub n_nonconverged: usize,
    /// Repetitions that needed at least one redraw.
    pub n_redrawn: usize,
    /// Median standard error over converged repetitions.
    pub median_se: f64,
}

impl PValueSample {
    /// Builds a sample from unsorted p-values (and equivalence tails).
    pub fn from_p_values(
        label: impl Into<String>,
        n: usize,
        mut p: Vec<f64>,
        tails: Option<(Vec<f64>, Vec<f64>)>,
    ) -> Self {
        p.sort_by(f64::total_cmp);
        let logits = p.iter().map(|&x| logit(x)).collect();
        let tails_sorted = tails.map(|(mut l, mut u)| {
            l.sort_by(f64::total_cmp);
            u.sort_by(f64::total_cmp);
            (l, u)
        });
        Self {
            label: label.into(),
            n,
            p_sorted: p,
            logits,
            tails_sorted,
            n_nonconverged: 0,
            n_redrawn: 0,
            median_se: f64::NAN,
        }
    }

    pub fn replications(&self) -> usize {
        self.p_sorted.len()
    }

    pub fn power(&self, alpha: f64) -> Probability {
        power_from_p(&self.p_sorted, alpha)
    }
}

struct RepOutcome {
    p: f64,
    tails: Option<(f64, f64)>,
    se: f64,
    redrawn: bool,
    failed: bool,
}

fn simulate_repetition(
    scenario: &Scenario,
    stream_id: u64,
    kind: &HypothesisKind,
    n: usize,
    rep: usize,
    master_seed: u64,
) -> RepOutcome {
    for attempt in 0..MAX_ATTEMPTS {
        let path = StreamPath::new(stream_id, n as u64, rep as u64, Purpose::Data { attempt });
        let mut rng = RngStream::new(master_seed, path);
        let data = scenario.generate(n, &mut rng);
        let Ok(est) = scenario.analysis().estimate(&data, &mut rng) else {
            continue;
        };
        if let Ok(parts) = p_value_parts(&est, kind) {
            return RepOutcome {
                p: parts.p,
                tails: parts.tails,
                se: est.se,
                redrawn: attempt > 0,
                failed: false,
            };
        }
    }
    let tails = matches!(kind, HypothesisKind::Equivalence { .. }).then_some((1.0, 1.0));
    RepOutcome {
        p: 1.0,
        tails,
        se: f64::NAN,
        redrawn: true,
        failed: true,
    }
}

/// Simulates `replications` datasets of size `n`, analyses each and returns
/// the sorted p-values. Repetition `r` always uses the stream
/// `(master_seed, stream_id, n, r, attempt)`.
pub fn run_algorithm1(
    scenario: &Scenario,
    stream_id: u64,
    kind: &HypothesisKind,
    n: usize,
    replications: usize,
    master_seed: u64,
    exec: &Executor,
) -> Result<PValueSample, EngineError> {
    if replications < 2 || n < 1 {
        return Err(EngineError::InvalidInput(format!(
            "need R >= 2 and n >= 1 (got R = {replications}, n = {n})"
        )));
    }
    let outcomes = exec.map(replications, |rep| {
        simulate_repetition(scenario, stream_id, kind, n, rep, master_seed)
    });
    let failed = outcomes.iter().filter(|o| o.failed).count();
    if failed as f64 > MAX_NONCONVERGED_SHARE * replications as f64 {
        return Err(EngineError::TooManyNonConverged {
            label: scenario.label().to_string(),
            n,
            failed,
            replications,
        });
    }
    let redrawn = outcomes.iter().filter(|o| o.redrawn).count();
    let mut ses: Vec<f64> = outcomes.iter().map(|o| o.se).filter(|s| s.is_finite()).collect();
    ses.sort_by(f64::total_cmp);
    let median_se = if ses.is_empty() { f64::NAN } else { ses[ses.len() / 2] };
    let tails = matches!(kind, HypothesisKind::Equivalence { .. })
        .then(|| outcomes.iter().map(|o| o.tails.unwrap_or((1.0, 1.0))).unzip());
    let p = outcomes.iter().map(|o| o.p).collect();
    let mut sample = PValueSample::from_p_values(scenario.label(), n, p, tails);
    sample.n_nonconverged = failed;
    sample.n_redrawn = redrawn;
    sample.median_se = median_se;
    Ok(sample)
}

/// Share of repetitions rejecting at level `alpha`.
pub fn estimate_power(sample: &PValueSample, alpha: f64) -> Probability {
    sample.power(alpha)
}

/// √n-scaled median standard error over a pilot run, an estimate of the
/// asymptotic scale λ of the estimator under `scenario`.
pub fn estimate_lambda(
    scenario: &Scenario,
    stream_id: u64,
    n: usize,
    replications: usize,
    master_seed: u64,
    exec: &Executor,
) -> Option<f64> {
    let ses = exec.map(replications, |rep| {
        let path = StreamPath::new(stream_id, n as u64, rep as u64, Purpose::Pilot { attempt: 0 });
        let mut rng = RngStream::new(master_seed, path);
        let data = scenario.generate(n, &mut rng);
        scenario
            .analysis()
            .estimate(&data, &mut rng)
            .ok()
            .filter(|e| e.converged)
            .map(|e| e.se)
    });
    let mut ses: Vec<f64> = ses.into_iter().flatten().collect();
    if ses.is_empty() {
        return None;
    }
    ses.sort_by(f64::total_cmp);
    Some(ses[ses.len() / 2] * (n as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Logit-linear families
// ---------------------------------------------------------------------------

/// A line through `(anchor_n, anchor_logit)`; evaluated in anchored form so
/// the fitted points are reproduced to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitLine {
    pub anchor_n: f64,
    pub anchor_logit: f64,
    pub slope: f64,
}

impl LogitLine {
    pub fn through(n0: f64, l0: f64, n1: f64, l1: f64) -> Self {
        Self {
            anchor_n: n0,
            anchor_logit: l0,
            slope: (l1 - l0) / (n1 - n0),
        }
    }

    #[inline]
    pub fn at(&self, n: f64) -> f64 {
        self.anchor_logit + self.slope * (n - self.anchor_n)
    }

    pub fn intercept(&self) -> f64 {
        self.anchor_logit - self.slope * self.anchor_n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Lines model logit(p).
    OneSided,
    /// Lines model logit(p/2); predictions are doubled and capped at 1.
    TwoSided,
    /// Two families for the one-sided constituents; rank r of the first is
    /// paired with rank R−r+1 of the second.
    Equivalence,
}

impl FamilyKind {
    pub fn of(kind: &HypothesisKind) -> Self {
        match kind {
            HypothesisKind::OneSidedLower { .. } | HypothesisKind::OneSidedUpper { .. } => FamilyKind::OneSided,
            HypothesisKind::TwoSided { .. } => FamilyKind::TwoSided,
            HypothesisKind::Equivalence { .. } => FamilyKind::Equivalence,
        }
    }
}

/// One line per order-statistic rank, for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitLineFamily {
    pub kind: FamilyKind,
    /// Ascending rank order. For equivalence, the lower-bound tail.
    pub lines: Vec<LogitLine>,
    /// Equivalence only: the upper-bound tail, ascending rank order.
    pub upper_lines: Option<Vec<LogitLine>>,
}

fn modelled_logits(sample: &PValueSample, fk: FamilyKind) -> Result<(Vec<f64>, Option<Vec<f64>>), EngineError> {
    Ok(match fk {
        FamilyKind::OneSided => (sample.logits.clone(), None),
        FamilyKind::TwoSided => (sample.p_sorted.iter().map(|&p| logit(0.5 * p)).collect(), None),
        FamilyKind::Equivalence => {
            let (lower, upper) = sample.tails_sorted.as_ref().ok_or_else(|| {
                EngineError::InvalidInput(format!(
                    "sample `{}` at n = {} has no one-sided tails for an equivalence fit",
                    sample.label, sample.n
                ))
            })?;
            (
                lower.iter().map(|&p| logit(p)).collect(),
                Some(upper.iter().map(|&p| logit(p)).collect()),
            )
        }
    })
}

/// Joins same-rank order statistics of the modelled logits at `n0` and `n1`.
pub fn fit_logit_lines(
    sample0: &PValueSample,
    sample1: &PValueSample,
    kind: &HypothesisKind,
) -> Result<LogitLineFamily, EngineError> {
    if sample0.n == sample1.n {
        return Err(EngineError::InvalidInput(format!("n0 and n1 must differ (both {})", sample0.n)));
    }
    if sample0.replications() != sample1.replications() {
        return Err(EngineError::InvalidInput(format!(
            "samples have different R ({} vs {})",
            sample0.replications(),
            sample1.replications()
        )));
    }
    let fk = FamilyKind::of(kind);
    let (l0, u0) = modelled_logits(sample0, fk)?;
    let (l1, u1) = modelled_logits(sample1, fk)?;
    let (n0, n1) = (sample0.n as f64, sample1.n as f64);
    let join = |a: &[f64], b: &[f64]| -> Vec<LogitLine> {
        a.iter().zip(b).map(|(&x, &y)| LogitLine::through(n0, x, n1, y)).collect()
    };
    Ok(LogitLineFamily {
        kind: fk,
        lines: join(&l0, &l1),
        upper_lines: match (u0, u1) {
            (Some(a), Some(b)) => Some(join(&a, &b)),
            _ => None,
        },
    })
}

/// Limiting logit slopes used to extrapolate from a single sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitSlopes {
    /// Slope of the modelled logit (lower-bound tail for equivalence).
    pub primary: f64,
    /// Equivalence only: slope of the upper-bound tail.
    pub upper: Option<f64>,
}

impl LimitSlopes {
    /// −a₁²/2 for each relevant boundary, with a₁ = (θ₁ − θ₀)/λ₀.
    pub fn from_theory(theta1: f64, lambda0: f64, kind: &HypothesisKind) -> Self {
        let slope = |theta0: f64| {
            let a = (theta1 - theta0) / lambda0;
            -0.5 * a * a
        };
        match *kind {
            HypothesisKind::OneSidedLower { theta0 }
            | HypothesisKind::OneSidedUpper { theta0 }
            | HypothesisKind::TwoSided { theta0 } => Self {
                primary: slope(theta0),
                upper: None,
            },
            HypothesisKind::Equivalence {
                theta0_lower,
                theta0_upper,
            } => Self {
                primary: slope(theta0_lower),
                upper: Some(slope(theta0_upper)),
            },
        }
    }
}

impl LogitLineFamily {
    /// Lines through the single sample's points with fixed slopes.
    pub fn from_anchor(sample: &PValueSample, kind: &HypothesisKind, slopes: LimitSlopes) -> Result<Self, EngineError> {
        let fk = FamilyKind::of(kind);
        let (l, u) = modelled_logits(sample, fk)?;
        let n0 = sample.n as f64;
        let mk = |v: &[f64], slope: f64| -> Vec<LogitLine> {
            v.iter()
                .map(|&x| LogitLine {
                    anchor_n: n0,
                    anchor_logit: x,
                    slope,
                })
                .collect()
        };
        Ok(Self {
            kind: fk,
            lines: mk(&l, slopes.primary),
            upper_lines: u.map(|u| mk(&u, slopes.upper.unwrap_or(slopes.primary))),
        })
    }

    pub fn replications(&self) -> usize {
        self.lines.len()
    }

    /// Predicted p-values at `n`, in rank order of the primary family.
    pub fn predicted_p_values(&self, n: f64) -> Vec<f64> {
        match self.kind {
            FamilyKind::OneSided => self.lines.iter().map(|l| inv_logit(l.at(n))).collect(),
            FamilyKind::TwoSided => self.lines.iter().map(|l| (2.0 * inv_logit(l.at(n))).min(1.0)).collect(),
            FamilyKind::Equivalence => {
                let upper = self.upper_lines.as_deref().unwrap_or(&[]);
                let r = self.lines.len();
                self.lines
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        let u = upper.get(r - 1 - i).map_or(1.0, |u| inv_logit(u.at(n)));
                        inv_logit(l.at(n)).max(u)
                    })
                    .collect()
            }
        }
    }

    pub fn rejections(&self, n: f64, alpha: f64) -> usize {
        rejection_count(&self.predicted_p_values(n), alpha)
    }

    /// Median per-rank slope of the primary family.
    pub fn median_slope(&self) -> f64 {
        let mut s: Vec<f64> = self.lines.iter().map(|l| l.slope).collect();
        if s.is_empty() {
            return f64::NAN;
        }
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    }
}

/// Predicted power at `n`.
pub fn predict_power(lines: &LogitLineFamily, n: f64, alpha: f64) -> Probability {
    power_from_p(&lines.predicted_p_values(n), alpha)
}

// ---------------------------------------------------------------------------
// Minimal sample size search
// ---------------------------------------------------------------------------

/// Smallest `n` in `[lo, hi]` with `meets(n)`, by integer bisection under a
/// monotonicity assumption followed by a scan of the three sizes below the
/// bisection answer.
pub fn find_min_n_with(
    lo: usize,
    hi: usize,
    meets: impl Fn(usize) -> bool,
    power: impl Fn(usize) -> f64,
) -> Result<usize, EngineError> {
    if lo > hi || lo == 0 {
        return Err(EngineError::InvalidInput(format!("bad search range [{lo}, {hi}]")));
    }
    if meets(lo) {
        return Ok(lo);
    }
    if !meets(hi) {
        return Err(EngineError::Unattainable {
            lo,
            hi,
            power_lo: power(lo),
            power_hi: power(hi),
        });
    }
    let (mut below, mut above) = (lo, hi);
    while above - below > 1 {
        let mid = below + (above - below) / 2;
        if meets(mid) {
            above = mid;
        } else {
            below = mid;
        }
    }
    let scan_from = above.saturating_sub(3).max(lo);
    Ok((scan_from..above).find(|&m| meets(m)).unwrap_or(above))
}

/// Smallest `n` in `range` whose predicted power reaches `target`.
pub fn find_min_n(
    lines: &LogitLineFamily,
    alpha: f64,
    target: f64,
    range: (usize, usize),
) -> Result<usize, EngineError> {
    let need = required_count(target, lines.replications());
    find_min_n_with(
        range.0,
        range.1,
        |n| lines.rejections(n as f64, alpha) >= need,
        |n| predict_power(lines, n as f64, alpha).value(),
    )
}

/// Default search range `[max(20, min(n0, n1)/4), 10·max(n0, n1)]`.
pub fn default_search_range(n0: usize, n1: usize) -> (usize, usize) {
    ((n0.min(n1) / 4).max(MIN_SEARCH_N), 10 * n0.max(n1))
}

// ---------------------------------------------------------------------------
// Choosing the second sample size
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum N1Strategy {
    /// A fixed second sample size; must lie on the side the power at n0
    /// dictates.
    UserFixed { n1: usize },
    /// Extrapolate from n0 with the limiting slopes −a₁²/2 and take the
    /// smallest size reaching the target. `lambda0` is the √n-scaled null
    /// standard deviation; when absent it is estimated by a pilot run.
    TheoremSlope { lambda0: Option<f64> },
    /// Multiply (underpowered) or divide (overpowered) n0 by `factor`.
    GeometricStep { factor: f64 },
}

fn geometric_step(n0: usize, sufficient: bool, factor: f64) -> usize {
    if sufficient {
        ((n0 as f64 / factor).round() as usize).clamp(1, n0.saturating_sub(1).max(1))
    } else {
        ((n0 as f64 * factor).round() as usize).max(n0 + 1)
    }
}

/// Picks the second sample size: below n0 when the target is already met
/// there, above it otherwise.
pub fn choose_n1(
    sample0: &PValueSample,
    kind: &HypothesisKind,
    alpha: f64,
    target: f64,
    strategy: &N1Strategy,
    slopes: Option<LimitSlopes>,
) -> Result<usize, EngineError> {
    let n0 = sample0.n;
    let power0 = sample0.power(alpha).value();
    let sufficient = rejection_count(&sample0.p_sorted, alpha) >= required_count(target, sample0.replications());
    let n1 = match *strategy {
        N1Strategy::UserFixed { n1 } => {
            if n1 == n0 || (sufficient && n1 > n0) || (!sufficient && n1 < n0) || n1 == 0 {
                return Err(EngineError::SideRule {
                    n0,
                    n1,
                    power: power0,
                    target,
                });
            }
            n1
        }
        N1Strategy::GeometricStep { factor } => {
            if !(factor > 1.0) {
                return Err(EngineError::InvalidInput(format!("geometric factor {factor} must be > 1")));
            }
            geometric_step(n0, sufficient, factor)
        }
        N1Strategy::TheoremSlope { .. } => match slopes {
            None => {
                log::warn!(
                    "scenario `{}`: no limiting slopes available; falling back to a geometric step of 2",
                    sample0.label
                );
                geometric_step(n0, sufficient, 2.0)
            }
            Some(slopes) => {
                let family = LogitLineFamily::from_anchor(sample0, kind, slopes)?;
                let (lo, hi) = ((n0 / 4).max(MIN_SEARCH_N).min(n0), 10 * n0);
                let found = match find_min_n(&family, alpha, target, (lo, hi)) {
                    Ok(n) => n,
                    Err(EngineError::Unattainable { .. }) => hi,
                    Err(e) => return Err(e),
                };
                if sufficient {
                    found.min(n0 - 1).max(1)
                } else {
                    found.max(n0 + 1)
                }
            }
        },
    };
    Ok(n1)
}

// ---------------------------------------------------------------------------
// Robust sample size determination
// ---------------------------------------------------------------------------

/// One scenario entering a robust study.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioRun<'a> {
    pub scenario: &'a Scenario,
    /// Namespace of this scenario's random streams.
    pub stream_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsdSettings {
    pub hypothesis: HypothesisSpec,
    pub target_power: f64,
    pub replications: usize,
    pub n0: usize,
    pub strategy: N1Strategy,
    pub master_seed: u64,
    /// Overrides [`default_search_range`] when set.
    pub search_range: Option<(usize, usize)>,
    /// Repetitions for the pilot run that estimates λ₀ when needed.
    pub pilot_replications: usize,
}

/// Per-scenario outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecommendation {
    pub label: String,
    pub n0: usize,
    pub n1: usize,
    pub n2: usize,
    pub power_n0: f64,
    pub power_n1: f64,
    /// Predicted power at the scenario's own minimal n.
    pub power_at_n2: f64,
    /// Predicted power at the robust recommendation.
    pub power_at_recommendation: f64,
    pub search_range: (usize, usize),
    pub median_slope: f64,
    pub nonconverged_n0: usize,
    pub nonconverged_n1: usize,
    pub redrawn_n0: usize,
    pub redrawn_n1: usize,
    pub lambda0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    /// max over scenarios of n2.
    pub robust_n: usize,
    pub scenarios: Vec<ScenarioRecommendation>,
    pub replications: usize,
    pub master_seed: u64,
}

/// Output of [`robust_ssd`]: the recommendation plus the fitted families,
/// aligned with the input scenarios.
#[derive(Debug, Clone)]
pub struct RobustSsdOutput {
    pub recommendation: Recommendation,
    pub families: Vec<LogitLineFamily>,
}

fn run_scenario(
    run: &ScenarioRun<'_>,
    settings: &SsdSettings,
    exec: &Executor,
) -> Result<(ScenarioRecommendation, LogitLineFamily), EngineError> {
    let kind = &settings.hypothesis.kind;
    let alpha = settings.hypothesis.alpha();
    let scenario = run.scenario;
    let sample0 = run_algorithm1(
        scenario,
        run.stream_id,
        kind,
        settings.n0,
        settings.replications,
        settings.master_seed,
        exec,
    )?;

    let mut lambda0 = None;
    let slopes = match settings.strategy {
        N1Strategy::TheoremSlope { lambda0: given } => {
            let l0 = match given {
                Some(v) => Some(v),
                None => {
                    let null = scenario.with_true_theta(kind.null_boundary())?;
                    estimate_lambda(
                        &null,
                        run.stream_id,
                        settings.n0,
                        settings.pilot_replications.max(2),
                        settings.master_seed,
                        exec,
                    )
                }
            };
            lambda0 = l0;
            l0.filter(|v| *v > 0.0)
                .map(|v| LimitSlopes::from_theory(scenario.true_theta(), v, kind))
        }
        _ => None,
    };
    let n1 = choose_n1(&sample0, kind, alpha, settings.target_power, &settings.strategy, slopes)?;
    let sample1 = run_algorithm1(
        scenario,
        run.stream_id,
        kind,
        n1,
        settings.replications,
        settings.master_seed,
        exec,
    )?;
    let family = fit_logit_lines(&sample0, &sample1, kind)?;
    let range = settings
        .search_range
        .unwrap_or_else(|| default_search_range(settings.n0, n1));
    let n2 = find_min_n(&family, alpha, settings.target_power, range)?;
    let rec = ScenarioRecommendation {
        label: scenario.label().to_string(),
        n0: settings.n0,
        n1,
        n2,
        power_n0: sample0.power(alpha).value(),
        power_n1: sample1.power(alpha).value(),
        power_at_n2: predict_power(&family, n2 as f64, alpha).value(),
        power_at_recommendation: f64::NAN,
        search_range: range,
        median_slope: family.median_slope(),
        nonconverged_n0: sample0.n_nonconverged,
        nonconverged_n1: sample1.n_nonconverged,
        redrawn_n0: sample0.n_redrawn,
        redrawn_n1: sample1.n_redrawn,
        lambda0,
    };
    Ok((rec, family))
}

/// Two-sample-size robust design over `runs`: per-scenario minimal n from
/// logit-linear extrapolation, and their maximum.
pub fn robust_ssd(runs: &[ScenarioRun<'_>], settings: &SsdSettings, exec: &Executor) -> Result<RobustSsdOutput, EngineError> {
    if runs.is_empty() {
        return Err(EngineError::InvalidInput("at least one scenario is required".into()));
    }
    if !(settings.target_power > 0.0 && settings.target_power < 1.0) {
        return Err(EngineError::InvalidInput(format!(
            "target power {} must lie in (0, 1)",
            settings.target_power
        )));
    }
    let mut recs = Vec::with_capacity(runs.len());
    let mut families = Vec::with_capacity(runs.len());
    for run in runs {
        let (rec, family) = run_scenario(run, settings, exec).map_err(|e| e.in_scenario(run.scenario.label()))?;
        log::info!(
            "scenario `{}`: n1 = {}, n2 = {} (power {:.4} at n0, {:.4} at n1)",
            rec.label,
            rec.n1,
            rec.n2,
            rec.power_n0,
            rec.power_n1
        );
        recs.push(rec);
        families.push(family);
    }
    let robust_n = recs.iter().map(|r| r.n2).max().unwrap_or(0);
    let alpha = settings.hypothesis.alpha();
    for (rec, family) in recs.iter_mut().zip(&families) {
        rec.power_at_recommendation = predict_power(family, robust_n as f64, alpha).value();
    }
    Ok(RobustSsdOutput {
        recommendation: Recommendation {
            robust_n,
            scenarios: recs,
            replications: settings.replications,
            master_seed: settings.master_seed,
        },
        families,
    })
}

// ---------------------------------------------------------------------------
// Validation and extensions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub n: usize,
    pub power: f64,
}

/// Independent simulation at every grid point.
pub fn naive_sweep(
    scenario: &Scenario,
    stream_id: u64,
    kind: &HypothesisKind,
    alpha: f64,
    grid: &[usize],
    replications: usize,
    master_seed: u64,
    exec: &Executor,
) -> Result<Vec<PowerPoint>, EngineError> {
    if grid.is_empty() {
        return Err(EngineError::InvalidInput("sweep grid is empty".into()));
    }
    grid.iter()
        .map(|&n| {
            let s = run_algorithm1(scenario, stream_id, kind, n, replications, master_seed, exec)?;
            Ok(PowerPoint {
                n,
                power: s.power(alpha).value(),
            })
        })
        .collect()
}

/// Predicted power over a grid.
pub fn power_curve(family: &LogitLineFamily, grid: &[usize], alpha: f64) -> Vec<PowerPoint> {
    grid.iter()
        .map(|&n| PowerPoint {
            n,
            power: predict_power(family, n as f64, alpha).value(),
        })
        .collect()
}

fn check_weights(families: &[LogitLineFamily], weights: &[f64]) -> Result<(), EngineError> {
    if families.len() != weights.len() {
        return Err(EngineError::InvalidInput(format!(
            "{} weights for {} scenarios",
            weights.len(),
            families.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EngineError::InvalidInput("weights must be non-negative and sum to 1".into()));
    }
    Ok(())
}

/// Σₖ wₖ · predicted powerₖ(n).
pub fn weighted_power(families: &[LogitLineFamily], weights: &[f64], n: f64, alpha: f64) -> Result<Probability, EngineError> {
    check_weights(families, weights)?;
    let total = families
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(f, w)| w * predict_power(f, n, alpha).value())
        .sum::<f64>();
    Ok(Probability::saturating(total))
}

/// Smallest `n` in `range` whose weighted predicted power reaches `target`.
pub fn find_min_n_weighted(
    families: &[LogitLineFamily],
    weights: &[f64],
    alpha: f64,
    target: f64,
    range: (usize, usize),
) -> Result<usize, EngineError> {
    check_weights(families, weights)?;
    let power = |n: usize| weighted_power(families, weights, n as f64, alpha).map_or(0.0, |p| p.value());
    // Tolerance absorbs rounding in the weighted sum of exact fractions.
    find_min_n_with(range.0, range.1, |n| power(n) >= target - 1e-12, power)
}
