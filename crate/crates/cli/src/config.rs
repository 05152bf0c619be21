//! TOML run configuration: parsing, defaults and validation.
//!
//! Every key that is filled in by a default is reported back (and logged) so
//! a run log shows the complete effective configuration. Errors carry the
//! dotted path of the offending key, e.g. `scenario[1].rho.copula.rho`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ssd_core::dgp::{
    AllocationRho, ClusteredEta, DgpError, ClusteredRho, Family, PoissonEta, PoissonRho, Scenario, TwoArmBinaryEta,
    TwoArmNormalEta,
};
use ssd_core::engine::{N1Strategy, SsdSettings};
use ssd_core::estimators::Analysis;
use ssd_core::pvalue::HypothesisSpec;
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use thiserror::Error;
use toml::{Table, Value};

pub const DEFAULT_REPLICATIONS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_PILOT_REPLICATIONS: usize = 1_000;
pub const DEFAULT_OUTPUT_DIR: &str = "out";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed TOML: {0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
}

fn field(path: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    TwoArmNormal,
    TwoArmBinary,
    ClusteredGaussianDropout,
    LongitudinalPoissonCopula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub label: String,
    pub family: FamilyName,
    /// Defaults to the estimand implied by `eta`.
    pub true_theta: Option<f64>,
    pub eta: Table,
    pub rho: Table,
    pub analysis: Analysis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRange {
    pub lo: usize,
    pub hi: usize,
}

/// Inclusive arithmetic grid `start, start + step, …, ≤ stop`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: usize,
    pub stop: usize,
    pub step: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<usize> {
        (self.start..=self.stop).step_by(self.step.max(1)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub hypothesis: HypothesisSpec,
    /// 1 − β.
    pub target_power: f64,
    pub replications: usize,
    pub n0: usize,
    pub n1: N1Strategy,
    pub seed: u64,
    pub pilot_replications: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchRange>,
    /// Grid for power curves and the naive sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<GridSpec>,
    /// Scenario weights for the weighted-combination recommendation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub output_dir: PathBuf,
    /// Thread count; never affects results.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub svg: bool,
    pub scenario: Vec<ScenarioConfig>,
}

/// A validated configuration with its scenarios built.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub scenarios: Vec<Scenario>,
    /// `key = value` for every default that was applied.
    pub defaults: Vec<String>,
}

impl RunConfig {
    pub fn settings(&self) -> SsdSettings {
        SsdSettings {
            hypothesis: self.hypothesis,
            target_power: self.target_power,
            replications: self.replications,
            n0: self.n0,
            strategy: self.n1,
            master_seed: self.seed,
            search_range: self.search.map(|s| (s.lo, s.hi)),
            pilot_replications: self.pilot_replications,
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable as TOML")
    }
}

pub fn parse_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

fn default_into(table: &mut Table, key: &str, value: Value, prefix: &str, log: &mut Vec<String>) {
    if !table.contains_key(key) {
        log.push(format!("{prefix}{key} = {value}"));
        table.insert(key.to_string(), value);
    }
}

fn typed<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." || inner.is_empty() {
            match prefix.trim_end_matches('.') {
                "" => "config".to_string(),
                p => p.to_string(),
            }
        } else {
            format!("{prefix}{inner}")
        };
        field(path, e.into_inner())
    })
}

pub fn parse_config_str(text: &str) -> Result<LoadedConfig, ConfigError> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let mut defaults = Vec::new();
    apply_defaults(&mut table, &mut defaults);
    let mut config: RunConfig = typed(Value::Table(table), "")?;
    let scenarios = validate(&config)?;
    for (i, (cfg, s)) in config.scenario.iter_mut().zip(&scenarios).enumerate() {
        if cfg.true_theta.is_none() {
            cfg.true_theta = Some(s.true_theta());
            defaults.push(format!("scenario[{i}].true_theta = {}", s.true_theta()));
        }
    }
    for d in &defaults {
        log::info!("default applied: {d}");
    }
    Ok(LoadedConfig {
        config,
        scenarios,
        defaults,
    })
}

fn apply_defaults(table: &mut Table, log: &mut Vec<String>) {
    default_into(table, "replications", Value::Integer(DEFAULT_REPLICATIONS as i64), "", log);
    default_into(table, "seed", Value::Integer(DEFAULT_SEED as i64), "", log);
    default_into(
        table,
        "pilot_replications",
        Value::Integer(DEFAULT_PILOT_REPLICATIONS as i64),
        "",
        log,
    );
    default_into(table, "output_dir", Value::String(DEFAULT_OUTPUT_DIR.into()), "", log);
    default_into(table, "svg", Value::Boolean(true), "", log);
    if let Some(Value::Table(n1)) = table.get_mut("n1") {
        default_into(n1, "strategy", Value::String("user_fixed".into()), "n1.", log);
    }
    if let Some(Value::Array(scenarios)) = table.get_mut("scenario") {
        for (i, s) in scenarios.iter_mut().enumerate() {
            let Value::Table(s) = s else { continue };
            let prefix = format!("scenario[{i}].");
            let poisson = s.get("family").and_then(Value::as_str) == Some("longitudinal_poisson_copula");
            if poisson {
                if let Some(Value::Table(rho)) = s.get_mut("rho") {
                    default_into(rho, "overdispersion", Value::Float(0.0), &format!("{prefix}rho."), log);
                }
            }
            if let Some(Value::Table(a)) = s.get_mut("analysis") {
                if a.get("recipe").and_then(Value::as_str) == Some("gee") {
                    default_into(a, "correction", Value::String("none".into()), &format!("{prefix}analysis."), log);
                }
            }
        }
    }
}

fn build_family(s: &ScenarioConfig, prefix: &str) -> Result<Family, ConfigError> {
    let eta = Value::Table(s.eta.clone());
    let rho = Value::Table(s.rho.clone());
    let (pe, pr) = (format!("{prefix}eta."), format!("{prefix}rho."));
    Ok(match s.family {
        FamilyName::TwoArmNormal => Family::TwoArmNormal {
            eta: typed::<TwoArmNormalEta>(eta, &pe)?,
            rho: typed::<AllocationRho>(rho, &pr)?,
        },
        FamilyName::TwoArmBinary => Family::TwoArmBinary {
            eta: typed::<TwoArmBinaryEta>(eta, &pe)?,
            rho: typed::<AllocationRho>(rho, &pr)?,
        },
        FamilyName::ClusteredGaussianDropout => Family::ClusteredGaussianDropout {
            eta: typed::<ClusteredEta>(eta, &pe)?,
            rho: typed::<ClusteredRho>(rho, &pr)?,
        },
        FamilyName::LongitudinalPoissonCopula => Family::LongitudinalPoissonCopula {
            eta: typed::<PoissonEta>(eta, &pe)?,
            rho: typed::<PoissonRho>(rho, &pr)?,
        },
    })
}

fn validate(c: &RunConfig) -> Result<Vec<Scenario>, ConfigError> {
    HypothesisSpec::new(c.hypothesis.kind, c.hypothesis.alpha()).map_err(|e| field("hypothesis", e))?;
    if !(c.target_power > 0.0 && c.target_power < 1.0) {
        return Err(field("target_power", format!("{} must lie in (0, 1)", c.target_power)));
    }
    if c.replications < 2 {
        return Err(field("replications", "must be at least 2"));
    }
    if c.pilot_replications < 2 {
        return Err(field("pilot_replications", "must be at least 2"));
    }
    if c.n0 == 0 {
        return Err(field("n0", "must be positive"));
    }
    match c.n1 {
        N1Strategy::UserFixed { n1 } if n1 == 0 || n1 == c.n0 => {
            return Err(field("n1.n1", "must be positive and differ from n0"));
        }
        N1Strategy::GeometricStep { factor } if !(factor > 1.0) => {
            return Err(field("n1.factor", "must be greater than 1"));
        }
        N1Strategy::TheoremSlope { lambda0: Some(l) } if !(l > 0.0) => {
            return Err(field("n1.lambda0", "must be positive"));
        }
        _ => {}
    }
    if let Some(s) = c.search {
        if s.lo == 0 || s.lo >= s.hi {
            return Err(field("search", format!("need 0 < lo < hi (got lo = {}, hi = {})", s.lo, s.hi)));
        }
    }
    if let Some(g) = c.sweep {
        if g.step == 0 || g.start == 0 || g.start > g.stop {
            return Err(field("sweep", "need 0 < start <= stop and step > 0"));
        }
    }
    if c.workers == Some(0) {
        return Err(field("workers", "must be at least 1"));
    }
    if c.scenario.is_empty() {
        return Err(field("scenario", "at least one [[scenario]] is required"));
    }
    if let Some(w) = &c.weights {
        if w.len() != c.scenario.len() {
            return Err(field(
                "weights",
                format!("{} weights for {} scenarios", w.len(), c.scenario.len()),
            ));
        }
        if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(field("weights", "must be non-negative and sum to 1"));
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(c.scenario.len());
    for (i, s) in c.scenario.iter().enumerate() {
        let prefix = format!("scenario[{i}].");
        if s.label.trim().is_empty() {
            return Err(field(format!("{prefix}label"), "must not be empty"));
        }
        if !seen.insert(s.label.as_str()) {
            return Err(field(format!("{prefix}label"), format!("duplicate label `{}`", s.label)));
        }
        let family = build_family(s, &prefix)?;
        let theta = s.true_theta.unwrap_or_else(|| family.implied_theta());
        let scenario = Scenario::new(s.label.clone(), family, theta, s.analysis.clone()).map_err(|e| match e {
            DgpError::ThetaMismatch { .. } => field(format!("{prefix}true_theta"), e),
            _ => field(format!("scenario[{i}]"), e),
        })?;
        out.push(scenario);
    }
    Ok(out)
}
