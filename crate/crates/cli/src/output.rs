//! Artifact formats: recommendation JSON, power-curve CSV and SVG charts.

use anyhow::{Context, Result};
use serde::Serialize;
use ssd_core::engine::{N1Strategy, PowerPoint, Recommendation, ScenarioRecommendation};
use ssd_core::pvalue::HypothesisSpec;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Name of the only field excluded from reproducibility comparisons.
pub const TIMESTAMP_FIELD: &str = "generated_at";

#[derive(Debug, Clone, Serialize)]
pub struct RecommendationDoc<'a> {
    pub generated_at: String,
    pub robust_n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighted_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<&'a [f64]>,
    pub hypothesis: &'a HypothesisSpec,
    pub target_power: f64,
    pub replications: usize,
    pub n0: usize,
    pub n1_strategy: &'a N1Strategy,
    pub master_seed: u64,
    pub scenarios: &'a [ScenarioRecommendation],
}

impl<'a> RecommendationDoc<'a> {
    pub fn new(
        rec: &'a Recommendation,
        hypothesis: &'a HypothesisSpec,
        target_power: f64,
        n0: usize,
        n1_strategy: &'a N1Strategy,
    ) -> Self {
        Self {
            generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            robust_n: rec.robust_n,
            weighted_n: None,
            weights: None,
            hypothesis,
            target_power,
            replications: rec.replications,
            n0,
            n1_strategy,
            master_seed: rec.master_seed,
            scenarios: &rec.scenarios,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("recommendation serializes");
        s.push('\n');
        s
    }
}

/// Full-precision decimal rendering (16 significant digits).
pub fn fmt_full(x: f64) -> String {
    format!("{x:.15e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveMethod {
    Algorithm2,
    Naive,
}

impl CurveMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveMethod::Algorithm2 => "algorithm2",
            CurveMethod::Naive => "naive",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Curve {
    pub scenario: String,
    pub method: CurveMethod,
    pub points: Vec<PowerPoint>,
}

pub fn power_curves_csv(curves: &[Curve]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario", "n", "method", "power"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([c.scenario.as_str(), &p.n.to_string(), c.method.as_str(), &fmt_full(p.power)])?;
        }
    }
    Ok(w.into_inner().context("flushing CSV buffer")?)
}

const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6a4c93", "#00798c"];

/// Power against n per curve, with a dotted line at the target power and an
/// optional dashed marker at the recommended n.
pub fn power_curves_svg(curves: &[Curve], target_power: f64, marker: Option<usize>) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (60.0, 180.0, 20.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let ns = curves.iter().flat_map(|c| c.points.iter().map(|p| p.n));
    let xmin = ns.clone().min().unwrap_or(0) as f64;
    let xmax = (ns.max().unwrap_or(1) as f64).max(xmin + 1.0);
    let x = |n: f64| left + (n - xmin) / (xmax - xmin) * pw;
    let y = |p: f64| top + (1.0 - p) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let p = i as f64 / 5.0;
        let n = xmin + p * (xmax - xmin);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.1}</text>"#,
            left - 6.0,
            y(p) + 4.0,
            p
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
            x(n),
            top + ph + 18.0,
            n
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">n (ISUs)</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">power</text>"#,
        top + ph / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="black" stroke-dasharray="2 3"/>"#,
        left + pw,
        y(target_power),
        y(target_power)
    );
    if let Some(n) = marker {
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" x2="{0:.1}" y1="{top}" y2="{1:.1}" stroke="gray" stroke-dasharray="6 4"/>"#,
            x(n as f64),
            top + ph
        );
    }
    for (i, c) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let dash = match c.method {
            CurveMethod::Algorithm2 => "",
            CurveMethod::Naive => r#" stroke-dasharray="5 3""#,
        };
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.n as f64), y(p.power)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5"{dash} points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" x2="{:.1}" y1="{ly:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"{dash}/>"#,
            left + pw + 10.0,
            left + pw + 30.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{} ({})</text>"#,
            left + pw + 36.0,
            ly + 4.0,
            xml_escape(&c.scenario),
            c.method.as_str()
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Writes every file or none: on the first failure the files already written
/// are removed.
pub fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = std::fs::write(&path, bytes) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            let _ = std::fs::remove_file(&path);
            return Err(e).with_context(|| format!("writing {}", path.display()));
        }
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_precision_numbers() {
        let s = fmt_full(0.8);
        assert_eq!(s, "8.000000000000000e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.8);
        let third = fmt_full(1.0 / 3.0);
        let digits = third.split('e').next().unwrap().chars().filter(char::is_ascii_digit).count();
        assert!(digits >= 12);
    }

    #[test]
    fn csv_layout() {
        let curves = [Curve {
            scenario: "a,b".into(),
            method: CurveMethod::Naive,
            points: vec![PowerPoint { n: 30, power: 0.5 }],
        }];
        let text = String::from_utf8(power_curves_csv(&curves).unwrap()).unwrap();
        assert_eq!(text, "scenario,n,method,power\n\"a,b\",30,naive,5.000000000000000e-1\n");
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let curves = [Curve {
            scenario: "x<y".into(),
            method: CurveMethod::Algorithm2,
            points: vec![PowerPoint { n: 30, power: 0.2 }, PowerPoint { n: 60, power: 0.9 }],
        }];
        let svg = power_curves_svg(&curves, 0.8, Some(50));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("x&lt;y"));
        assert!(svg.contains("stroke-dasharray=\"2 3\""));
    }

    #[test]
    fn failed_write_removes_earlier_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = [("a.txt", b"a".to_vec()), ("missing/b.txt", b"b".to_vec())];
        assert!(write_all(dir.path(), &files).is_err());
        assert!(!dir.path().join("a.txt").exists());
    }
}
