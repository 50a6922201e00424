//! Image-report corpus: UTF-8 line-delimited JSON records.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One image-report pair. `labels`, when present, gives per-pathology 0/1
/// ground truth for classification evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    /// Image path relative to the corpus file's directory.
    pub image: String,
    pub report: ReportText,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportText {
    pub findings: String,
    pub impression: String,
}

impl Report {
    /// Findings and impression joined for encoding.
    pub fn full_text(&self) -> String {
        let f = self.report.findings.trim();
        let i = self.report.impression.trim();
        match (f.is_empty(), i.is_empty()) {
            (false, false) => format!("{f} {i}"),
            (false, true) => f.to_string(),
            (true, _) => i.to_string(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::validation("report id must be non-empty"));
        }
        if self.report.findings.trim().is_empty() && self.report.impression.trim().is_empty() {
            return Err(Error::validation(format!(
                "report {}: findings and impression are both empty",
                self.id
            )));
        }
        if let Some(labels) = &self.labels {
            for (k, v) in labels {
                if *v > 1 {
                    return Err(Error::validation(format!(
                        "report {}: label {k} must be 0 or 1, got {v}",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub reports: Vec<Report>,
    /// Directory image paths are resolved against.
    pub root: PathBuf,
}

impl Corpus {
    pub fn new(reports: Vec<Report>, root: PathBuf) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &reports {
            r.validate()?;
            if !seen.insert(r.id.clone()) {
                return Err(Error::validation(format!("duplicate id {:?}", r.id)));
            }
        }
        Ok(Corpus { reports, root })
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn image_path(&self, r: &Report) -> PathBuf {
        self.root.join(&r.image)
    }

    pub fn get(&self, id: &str) -> Option<&Report> {
        self.reports.iter().find(|r| r.id == id)
    }
}

/// Load a line-delimited corpus file. Records are returned in file order;
/// image files are not touched here (existence is checked when they are
/// actually read).
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let reader = BufReader::new(file);
    let mut reports = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let report: Report = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        reports.push(report);
    }
    let root = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    Corpus::new(reports, root)
}

/// Write the corpus as one JSON record per line.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in &corpus.reports {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::validation(e.to_string()))?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(name: &str) -> PathBuf {
        let d =
            std::env::temp_dir().join(format!("promptloc-corpus-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&d);
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    fn sample(id: &str) -> Report {
        Report {
            id: id.into(),
            image: format!("images/{id}.png"),
            report: ReportText {
                findings: "a red circle in the upper left.".into(),
                impression: "one shape.".into(),
            },
            labels: None,
        }
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let d = tmpdir("empty");
        let p = d.join("corpus.jsonl");
        std::fs::write(&p, "").unwrap();
        let c = load_corpus(&p).unwrap();
        assert_eq!(c.len(), 0);
    }

    #[test]
    fn two_lines_load_in_order() {
        // oracle: the file has exactly two non-empty lines
        let d = tmpdir("two");
        let p = d.join("corpus.jsonl");
        let c = Corpus::new(vec![sample("a"), sample("b")], d.clone()).unwrap();
        save_corpus(&c, &p).unwrap();
        let raw = std::fs::read_to_string(&p).unwrap();
        assert_eq!(raw.lines().filter(|l| !l.trim().is_empty()).count(), 2);

        let loaded = load_corpus(&p).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.reports[0].id, "a");
        assert_eq!(loaded.reports[1].id, "b");
    }

    #[test]
    fn missing_id_is_parse_error_at_line_1() {
        let d = tmpdir("noid");
        let p = d.join("corpus.jsonl");
        std::fs::write(
            &p,
            "{\"image\":\"x.png\",\"report\":{\"findings\":\"f\",\"impression\":\"\"}}\n",
        )
        .unwrap();
        match load_corpus(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = Corpus::new(vec![sample("a"), sample("a")], PathBuf::from(".")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn empty_text_rejected() {
        let mut r = sample("a");
        r.report.findings = "  ".into();
        r.report.impression = String::new();
        let err = Corpus::new(vec![r], PathBuf::from(".")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn save_load_round_trips() {
        let d = tmpdir("rt");
        let p = d.join("corpus.jsonl");
        let mut labeled = sample("z");
        labeled.labels = Some(
            [
                ("red circle".to_string(), 1u8),
                ("blue square".to_string(), 0u8),
            ]
            .into(),
        );
        let c = Corpus::new(vec![sample("a"), labeled], d.clone()).unwrap();
        save_corpus(&c, &p).unwrap();
        let loaded = load_corpus(&p).unwrap();
        assert_eq!(loaded.reports, c.reports);

        // and the bytes themselves round-trip
        let p2 = d.join("corpus2.jsonl");
        save_corpus(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }
}
