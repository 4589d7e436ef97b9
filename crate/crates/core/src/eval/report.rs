//! Metrics blocks and PR-curve rows on disk.
//!
//! `metrics.toml` holds one table per dataset key with fields, in order:
//! `dataset, iou_threshold, score_threshold, ap, miou, precision, recall, f1`,
//! optionally followed by a `[<key>.timing]` table with
//! `preprocess, inference, visualization, total, fps` (seconds / frames per second).
//! `pr_<key>.csv` holds `threshold,precision,recall` rows.
//! Every float is written with six decimal places.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PrCurve, TimingReport};
use crate::error::{Error, Result};

/// Dataset-level quality metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub ap: f64,
    pub miou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// What gets exported for one dataset key.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub key: String,
    pub report: EvalReport,
    pub curve: PrCurve,
    pub timing: Option<TimingReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingBlock {
    pub preprocess: f64,
    pub inference: f64,
    pub visualization: f64,
    pub total: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    #[serde(flatten)]
    pub report: EvalReport,
    pub timing: Option<TimingBlock>,
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn render_metrics(entries: &[ReportEntry]) -> String {
    let mut s = String::new();
    for (i, e) in entries.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        let r = &e.report;
        let _ = writeln!(s, "[{}]", e.key);
        let _ = writeln!(s, "dataset = {:?}", r.dataset);
        for (name, v) in [
            ("iou_threshold", r.iou_threshold),
            ("score_threshold", r.score_threshold),
            ("ap", r.ap),
            ("miou", r.miou),
            ("precision", r.precision),
            ("recall", r.recall),
            ("f1", r.f1),
        ] {
            let _ = writeln!(s, "{name} = {}", f6(v));
        }
        if let Some(t) = &e.timing {
            let _ = writeln!(s, "\n[{}.timing]", e.key);
            for (name, v) in [
                ("preprocess", t.preprocess),
                ("inference", t.inference),
                ("visualization", t.visualization),
                ("total", t.total),
                ("fps", t.fps),
            ] {
                let _ = writeln!(s, "{name} = {}", f6(v));
            }
        }
    }
    s
}

pub fn render_pr_csv(curve: &PrCurve) -> String {
    let mut s = String::from("threshold,precision,recall\n");
    for p in &curve.points {
        let _ = writeln!(
            s,
            "{},{},{}",
            f6(p.threshold),
            f6(p.precision),
            f6(p.recall)
        );
    }
    s
}

pub fn parse_metrics(text: &str) -> Result<BTreeMap<String, MetricsBlock>> {
    toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))
}

/// Parses `threshold,precision,recall` rows back into a curve.
pub fn parse_pr_csv(text: &str) -> Result<PrCurve> {
    let mut lines = text.lines();
    if lines.next() != Some("threshold,precision,recall") {
        return Err(Error::Serde("missing PR-curve header".into()));
    }
    let mut points = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let v: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Serde(format!("{line}: {e}")))
            })
            .collect::<Result<_>>()?;
        if v.len() != 3 {
            return Err(Error::Serde(format!("expected 3 fields: {line}")));
        }
        points.push(super::PrPoint {
            threshold: v[0],
            precision: v[1],
            recall: v[2],
        });
    }
    Ok(PrCurve { points })
}

/// Writes `metrics.toml` and one `pr_<key>.csv` per entry into `dir`.
pub fn export_report(entries: &[ReportEntry], dir: &Path) -> Result<Vec<PathBuf>> {
    if entries.is_empty() {
        return Err(Error::InvalidInput("nothing to export".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let metrics = dir.join("metrics.toml");
    std::fs::write(&metrics, render_metrics(entries)).map_err(|e| Error::io(&metrics, e))?;
    written.push(metrics);
    for e in entries {
        let path = dir.join(format!("pr_{}.csv", e.key));
        std::fs::write(&path, render_pr_csv(&e.curve)).map_err(|err| Error::io(&path, err))?;
        written.push(path);
    }
    Ok(written)
}
