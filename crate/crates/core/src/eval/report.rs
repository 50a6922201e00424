//! Metric report: per-(pathology, metric) point estimates with bootstrap
//! intervals, exportable as line-delimited records and a rendered table in
//! the `value (lo, hi)` convention.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub pathology: String,
    pub metric: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn push(&mut self, row: MetricRow) -> Result<()> {
        if !row.value.is_finite() || !row.ci_low.is_finite() || !row.ci_high.is_finite() {
            return Err(Error::validation(format!(
                "non-finite metric value for ({}, {})",
                row.pathology, row.metric
            )));
        }
        if row.ci_low > row.ci_high {
            return Err(Error::validation(format!(
                "inverted interval for ({}, {})",
                row.pathology, row.metric
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, pathology: &str, metric: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.pathology == pathology && r.metric == metric)
    }

    pub fn metrics(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.metric) {
                out.push(r.metric.clone());
            }
        }
        out
    }

    pub fn pathologies(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.pathology) {
                out.push(r.pathology.clone());
            }
        }
        out
    }

    /// `0.342 (0.332, 0.350)` cells, one pathology per line.
    pub fn render_table(&self) -> String {
        let metrics = self.metrics();
        let pathologies = self.pathologies();
        let name_w = pathologies
            .iter()
            .map(|p| p.len())
            .max()
            .unwrap_or(9)
            .max(9);
        let mut out = String::new();
        out.push_str(&format!("{:<name_w$}", "pathology"));
        for m in &metrics {
            out.push_str(&format!("  {:<22}", m));
        }
        out.push('\n');
        for p in &pathologies {
            out.push_str(&format!("{p:<name_w$}"));
            for m in &metrics {
                match self.get(p, m) {
                    Some(r) => out.push_str(&format!(
                        "  {:<22}",
                        format!("{:.3} ({:.3}, {:.3})", r.value, r.ci_low, r.ci_high)
                    )),
                    None => out.push_str(&format!("  {:<22}", "-")),
                }
            }
            out.push('\n');
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for r in &self.rows {
            serde_json::to_writer(&mut buf, r).map_err(|e| Error::validation(e.to_string()))?;
            buf.push(b'\n');
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut report = MetricReport::default();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: MetricRow = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            report.push(row)?;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_value_lo_hi_convention() {
        let mut r = MetricReport::default();
        r.push(MetricRow {
            pathology: "pneumonia".into(),
            metric: "iou".into(),
            value: 0.342,
            ci_low: 0.332,
            ci_high: 0.350,
            n: 100,
        })
        .unwrap();
        let t = r.render_table();
        assert!(t.contains("0.342 (0.332, 0.350)"), "table was:\n{t}");
    }

    #[test]
    fn rejects_non_finite_and_inverted_rows() {
        let mut r = MetricReport::default();
        assert!(r
            .push(MetricRow {
                pathology: "p".into(),
                metric: "cnr".into(),
                value: f64::INFINITY,
                ci_low: 0.0,
                ci_high: 1.0,
                n: 1,
            })
            .is_err());
        assert!(r
            .push(MetricRow {
                pathology: "p".into(),
                metric: "iou".into(),
                value: 0.5,
                ci_low: 0.6,
                ci_high: 0.4,
                n: 1,
            })
            .is_err());
    }

    #[test]
    fn jsonl_round_trips() {
        let d = std::env::temp_dir().join(format!("promptloc-report-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        let p = d.join("m.jsonl");
        let mut r = MetricReport::default();
        for (pathology, metric, v) in [("a", "iou", 0.5), ("a", "dice", 0.6), ("mean", "iou", 0.5)]
        {
            r.push(MetricRow {
                pathology: pathology.into(),
                metric: metric.into(),
                value: v,
                ci_low: v - 0.1,
                ci_high: v + 0.1,
                n: 3,
            })
            .unwrap();
        }
        r.write_jsonl(&p).unwrap();
        let back = MetricReport::read_jsonl(&p).unwrap();
        assert_eq!(back.rows, r.rows);
    }
}
