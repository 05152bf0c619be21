//! Subcommand bodies. Each computes everything in memory first and writes
//! its artifacts in one step at the end.

use crate::config::{parse_config, LoadedConfig};
use crate::output::{power_curves_csv, power_curves_svg, write_all, Curve, CurveMethod, RecommendationDoc};
use anyhow::{bail, Context, Result};
use ssd_core::engine::{
    find_min_n_weighted, naive_sweep, power_curve, robust_ssd, Executor, RobustSsdOutput, ScenarioRun,
};
use ssd_core::proxy::{verify_theorem1_slope, ProxyConfig};
use ssd_core::pvalue::HypothesisKind;
use std::path::{Path, PathBuf};

/// Stream namespace offset for naive sweeps, keeping them independent of the
/// two anchor samples of the same scenario.
pub const SWEEP_STREAM_OFFSET: u64 = 1 << 32;

/// Command-line overrides of configuration values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<LoadedConfig> {
    let mut loaded = parse_config(path).with_context(|| format!("invalid configuration {}", path.display()))?;
    if let Some(seed) = overrides.seed {
        loaded.config.seed = seed;
    }
    if let Some(w) = overrides.workers {
        if w == 0 {
            bail!("--workers must be at least 1");
        }
        loaded.config.workers = Some(w);
    }
    if let Some(out) = &overrides.out {
        loaded.config.output_dir = out.clone();
    }
    Ok(loaded)
}

pub fn executor_for(loaded: &LoadedConfig) -> Result<Executor> {
    let workers = match loaded.config.workers {
        Some(w) => w,
        None => {
            let w = std::thread::available_parallelism().map_or(1, |n| n.get());
            log::info!("default applied: workers = {w}");
            w
        }
    };
    Ok(Executor::new(workers)?)
}

/// Result of a `run` computed in memory.
pub struct StudyOutput {
    pub ssd: RobustSsdOutput,
    pub weighted_n: Option<usize>,
    pub curves: Vec<Curve>,
}

fn curve_grid(loaded: &LoadedConfig, ssd: &RobustSsdOutput) -> Vec<usize> {
    if let Some(g) = loaded.config.sweep {
        return g.points();
    }
    let recs = &ssd.recommendation.scenarios;
    let lo = recs.iter().map(|r| r.search_range.0).min().unwrap_or(1);
    let hi = recs.iter().map(|r| r.search_range.1).max().unwrap_or(lo);
    let step = ((hi - lo) / 60).max(1);
    let mut grid: Vec<usize> = (lo..=hi).step_by(step).collect();
    if grid.last() != Some(&hi) {
        grid.push(hi);
    }
    grid
}

pub fn run_study(loaded: &LoadedConfig, exec: &Executor) -> Result<StudyOutput> {
    let cfg = &loaded.config;
    let runs: Vec<ScenarioRun<'_>> = loaded
        .scenarios
        .iter()
        .enumerate()
        .map(|(i, scenario)| ScenarioRun {
            scenario,
            stream_id: i as u64,
        })
        .collect();
    let settings = cfg.settings();
    let ssd = robust_ssd(&runs, &settings, exec)?;
    let alpha = cfg.hypothesis.alpha();
    let weighted_n = match &cfg.weights {
        None => None,
        Some(w) => {
            let recs = &ssd.recommendation.scenarios;
            let lo = recs.iter().map(|r| r.search_range.0).min().unwrap_or(1);
            let hi = recs.iter().map(|r| r.search_range.1).max().unwrap_or(lo);
            Some(find_min_n_weighted(&ssd.families, w, alpha, cfg.target_power, (lo, hi))?)
        }
    };
    let grid = curve_grid(loaded, &ssd);
    let curves = ssd
        .families
        .iter()
        .zip(&loaded.scenarios)
        .map(|(f, s)| Curve {
            scenario: s.label().to_string(),
            method: CurveMethod::Algorithm2,
            points: power_curve(f, &grid, alpha),
        })
        .collect();
    Ok(StudyOutput {
        ssd,
        weighted_n,
        curves,
    })
}

pub const RECOMMENDATION_FILE: &str = "recommendation.json";
pub const POWER_CURVES_FILE: &str = "power_curves.csv";
pub const POWER_CURVES_SVG: &str = "power_curves.svg";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_SVG: &str = "sweep.svg";
pub const PROXY_FILE: &str = "proxy_slopes.csv";

pub fn run(config: &Path, overrides: &Overrides) -> Result<Vec<PathBuf>> {
    let loaded = load(config, overrides)?;
    let exec = executor_for(&loaded)?;
    let cfg = &loaded.config;
    let study = run_study(&loaded, &exec)?;
    let rec = &study.ssd.recommendation;
    let mut doc = RecommendationDoc::new(rec, &cfg.hypothesis, cfg.target_power, cfg.n0, &cfg.n1);
    doc.weighted_n = study.weighted_n;
    doc.weights = cfg.weights.as_deref();
    let mut files = vec![
        (RECOMMENDATION_FILE, doc.to_json().into_bytes()),
        (POWER_CURVES_FILE, power_curves_csv(&study.curves)?),
    ];
    if cfg.svg {
        files.push((
            POWER_CURVES_SVG,
            power_curves_svg(&study.curves, cfg.target_power, Some(rec.robust_n)).into_bytes(),
        ));
    }
    log::info!("recommended n = {}", rec.robust_n);
    write_all(&cfg.output_dir, &files)
}

pub fn sweep(config: &Path, overrides: &Overrides) -> Result<Vec<PathBuf>> {
    let loaded = load(config, overrides)?;
    let exec = executor_for(&loaded)?;
    let cfg = &loaded.config;
    let Some(grid) = cfg.sweep else {
        bail!("the sweep subcommand needs a `sweep = {{ start, stop, step }}` grid in the configuration");
    };
    let grid = grid.points();
    let alpha = cfg.hypothesis.alpha();
    let mut curves = Vec::with_capacity(loaded.scenarios.len());
    for (i, s) in loaded.scenarios.iter().enumerate() {
        let points = naive_sweep(
            s,
            SWEEP_STREAM_OFFSET + i as u64,
            &cfg.hypothesis.kind,
            alpha,
            &grid,
            cfg.replications,
            cfg.seed,
            &exec,
        )
        .with_context(|| format!("scenario `{}`", s.label()))?;
        curves.push(Curve {
            scenario: s.label().to_string(),
            method: CurveMethod::Naive,
            points,
        });
    }
    let mut files = vec![(SWEEP_FILE, power_curves_csv(&curves)?)];
    if cfg.svg {
        files.push((SWEEP_SVG, power_curves_svg(&curves, cfg.target_power, None).into_bytes()));
    }
    write_all(&cfg.output_dir, &files)
}

/// One row of the slope-convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeRow {
    pub a1: f64,
    pub u: f64,
    pub lambda_ratio: f64,
    pub kind: &'static str,
    pub n: f64,
    pub slope: f64,
    pub limit: f64,
    /// Error of the slope at the last grid point; repeated on every row.
    pub relative_error: f64,
}

pub const PROXY_A1: [f64; 3] = [0.5, 1.0, 2.0];
pub const PROXY_U: [f64; 3] = [0.2, 0.5, 0.8];
pub const PROXY_LAMBDA_RATIO: [f64; 3] = [0.5, 1.0, 1.5];
pub const PROXY_N_GRID: [f64; 4] = [1e3, 1e4, 3e4, 1e5];

/// Slope tables over the (a₁, u, λ₁/λ₀) grid, with θ₀ = 0 and λ₀ = 1.
pub fn proxy_table(n_grid: &[f64]) -> Result<Vec<SlopeRow>> {
    let mut rows = Vec::new();
    let kinds = [
        ("one_sided_lower", HypothesisKind::OneSidedLower { theta0: 0.0 }),
        ("two_sided", HypothesisKind::TwoSided { theta0: 0.0 }),
    ];
    for a1 in PROXY_A1 {
        for u in PROXY_U {
            for ratio in PROXY_LAMBDA_RATIO {
                let cfg = ProxyConfig::new(a1, 1.0, ratio)?;
                for (name, kind) in &kinds {
                    let report = verify_theorem1_slope(&cfg, u, kind, n_grid)?;
                    rows.extend(report.points.iter().map(|p| SlopeRow {
                        a1,
                        u,
                        lambda_ratio: ratio,
                        kind: name,
                        n: p.n,
                        slope: p.slope,
                        limit: report.limit,
                        relative_error: report.relative_error,
                    }));
                }
            }
        }
    }
    Ok(rows)
}

pub fn proxy_csv(rows: &[SlopeRow]) -> Result<Vec<u8>> {
    use crate::output::fmt_full;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["a1", "u", "lambda_ratio", "kind", "n", "slope", "limit", "relative_error"])?;
    for r in rows {
        w.write_record([
            r.a1.to_string(),
            r.u.to_string(),
            r.lambda_ratio.to_string(),
            r.kind.to_string(),
            r.n.to_string(),
            fmt_full(r.slope),
            fmt_full(r.limit),
            fmt_full(r.relative_error),
        ])?;
    }
    Ok(w.into_inner().context("flushing CSV buffer")?)
}

pub fn proxy_verify(out: &Path, n_grid: Option<&[f64]>) -> Result<Vec<PathBuf>> {
    let rows = proxy_table(n_grid.unwrap_or(&PROXY_N_GRID))?;
    let worst = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    log::info!("largest relative slope error at the last grid point: {worst:.3e}");
    write_all(out, &[(PROXY_FILE, proxy_csv(&rows)?)])
}

/// Parses and validates only; returns a one-line summary per scenario.
pub fn validate(config: &Path, overrides: &Overrides) -> Result<Vec<String>> {
    let loaded = load(config, overrides)?;
    Ok(loaded
        .scenarios
        .iter()
        .map(|s| {
            format!(
                "{}: {} with {} (theta1 = {})",
                s.label(),
                s.family().name(),
                s.analysis().name(),
                s.true_theta()
            )
        })
        .collect())
}
