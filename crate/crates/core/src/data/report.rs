//! Score reports and their JSON / markdown renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Column order of the score table.
pub const METRIC_NAMES: [&str; 9] = ["CR", "CS", "CN", "CT", "CC", "CP", "CF", "IC", "CLS"];

/// The nine prototype-quality scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    /// Correctness (fidelity).
    #[serde(rename = "CR")]
    pub correctness: f64,
    /// Consistency across reruns.
    #[serde(rename = "CS")]
    pub consistency: f64,
    /// Continuity under input noise.
    #[serde(rename = "CN")]
    pub continuity: f64,
    /// Contrastivity: mean inter-prototype distance.
    #[serde(rename = "CT")]
    pub contrastivity: f64,
    /// Covariate complexity: prototype silhouette.
    #[serde(rename = "CC")]
    pub covariate_complexity: f64,
    /// Compactness: prototype count penalty.
    #[serde(rename = "CP")]
    pub compactness: f64,
    /// Confidence: sample-to-prototype distance.
    #[serde(rename = "CF")]
    pub confidence: f64,
    /// Input completeness: represented cluster fraction.
    #[serde(rename = "IC")]
    pub input_completeness: f64,
    /// Cohesion of latent space: centroid silhouette.
    #[serde(rename = "CLS")]
    pub cohesion: f64,
}

impl MetricScores {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.correctness,
            self.consistency,
            self.continuity,
            self.contrastivity,
            self.covariate_complexity,
            self.compactness,
            self.confidence,
            self.input_completeness,
            self.cohesion,
        ]
    }

    pub fn from_array(v: [f64; 9]) -> Self {
        MetricScores {
            correctness: v[0],
            consistency: v[1],
            continuity: v[2],
            contrastivity: v[3],
            covariate_complexity: v[4],
            compactness: v[5],
            confidence: v[6],
            input_completeness: v[7],
            cohesion: v[8],
        }
    }

    /// Element-wise `self - other`.
    pub fn delta(&self, other: &MetricScores) -> MetricScores {
        let a = self.to_array();
        let b = other.to_array();
        MetricScores::from_array(std::array::from_fn(|i| a[i] - b[i]))
    }
}

/// Clustering and sizing facts behind a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunContext {
    pub num_samples: usize,
    pub num_prototypes: usize,
    pub num_clusters: usize,
    pub per_class_k: BTreeMap<usize, usize>,
    pub mean_silhouette: f64,
    /// Number of rerun models behind CS; 0 means the base model was
    /// compared against itself.
    pub consistency_reruns: usize,
    pub ct_normalized: bool,
    pub silhouette_rescale: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_label: Option<String>,
    pub scores: MetricScores,
    pub total: f64,
    /// Validation loss (MSE) supplied by the caller, for context only.
    #[serde(default)]
    pub val_loss: Option<f64>,
    pub config_fingerprint: String,
    pub seed: u64,
    pub engine_version: String,
    pub context: RunContext,
    /// Wall-clock seconds per stage; empty unless timing was requested.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub clock: BTreeMap<String, f64>,
}

impl ScoreReport {
    /// Checks score ranges and that `total` is the mean of the nine scores.
    pub fn validate(&self) -> Result<(), DataError> {
        let arr = self.scores.to_array();
        for (name, v) in METRIC_NAMES.iter().zip(arr) {
            if !v.is_finite() {
                return Err(DataError::invalid(name, format!("non-finite score {v}")));
            }
            let ok = if *name == "CT" {
                v >= 0.0
            } else {
                (0.0..=1.0).contains(&v)
            };
            if !ok {
                return Err(DataError::invalid(name, format!("score {v} out of range")));
            }
        }
        let mean = arr.iter().sum::<f64>() / 9.0;
        if (mean - self.total).abs() > 1e-9 {
            return Err(DataError::invalid(
                "total",
                format!("total {} is not the mean {mean}", self.total),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
}

/// Renders reports as a table, one row per run.
pub fn render_markdown(reports: &[ScoreReport]) -> String {
    let mut out = String::from("| Run | Val Loss |");
    for name in METRIC_NAMES {
        let _ = write!(out, " {name} |");
    }
    out.push_str(" Total |\n|---|---|");
    for _ in METRIC_NAMES {
        out.push_str("---|");
    }
    out.push_str("---|\n");
    for (i, r) in reports.iter().enumerate() {
        let label = r
            .run_label
            .clone()
            .unwrap_or_else(|| (i + 1).to_string());
        let loss = r
            .val_loss
            .map(|l| format!("MSE: {l:.2}"))
            .unwrap_or_else(|| "-".to_string());
        let _ = write!(out, "| {label} | {loss} |");
        for v in r.scores.to_array() {
            let _ = write!(out, " {v:.2} |");
        }
        let _ = writeln!(out, " {:.2} |", r.total);
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), DataError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_report(report: &ScoreReport, path: &Path, format: ReportFormat) -> Result<(), DataError> {
    report.validate()?;
    match format {
        ReportFormat::Json => write_file(path, &report.to_json()),
        ReportFormat::Markdown => write_file(path, &render_markdown(std::slice::from_ref(report))),
    }
}

/// Several runs in one file: a JSON array or a multi-row table.
pub fn save_reports(reports: &[ScoreReport], path: &Path, format: ReportFormat) -> Result<(), DataError> {
    for r in reports {
        r.validate()?;
    }
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
            s.push('\n');
            write_file(path, &s)
        }
        ReportFormat::Markdown => write_file(path, &render_markdown(reports)),
    }
}

pub fn load_report(path: &Path) -> Result<ScoreReport, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile {
            field: "report".into(),
            path: path.display().to_string(),
        });
    }
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| DataError::Json {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(scores: [f64; 9]) -> ScoreReport {
        ScoreReport {
            run_label: None,
            scores: MetricScores::from_array(scores),
            total: scores.iter().sum::<f64>() / 9.0,
            val_loss: None,
            config_fingerprint: "abc".into(),
            seed: 7,
            engine_version: crate::ENGINE_VERSION.into(),
            context: RunContext::default(),
            clock: BTreeMap::new(),
        }
    }

    #[test]
    fn all_ones_row() {
        let md = render_markdown(&[report([1.0; 9])]);
        let row = md.lines().nth(2).unwrap();
        assert_eq!(
            row,
            "| 1 | - | 1.00 | 1.00 | 1.00 | 1.00 | 1.00 | 1.00 | 1.00 | 1.00 | 1.00 | 1.00 |"
        );
        let header = md.lines().next().unwrap();
        assert!(header.contains("| CR | CS | CN | CT | CC | CP | CF | IC | CLS | Total |"));
    }

    #[test]
    fn ecg200_map_row_ends_with_published_total() {
        let mut r = report([0.69, 0.28, 0.98, 0.43, 0.68, 0.79, 0.67, 0.67, 0.63]);
        r.val_loss = Some(1.45);
        r.run_label = Some("1 ECG200 MAP".into());
        let md = render_markdown(&[r]);
        let row = md.lines().nth(2).unwrap();
        assert!(row.ends_with("| 0.65 |"), "{row}");
        assert!(row.contains("MSE: 1.45"));
    }

    #[test]
    fn validate_rejects_bad_total_and_ranges() {
        let mut r = report([0.5; 9]);
        r.total = 0.4;
        assert!(r.validate().is_err());
        let mut s = [0.5; 9];
        s[3] = 3.0; // CT may exceed one
        assert!(report(s).validate().is_ok());
        s[0] = 1.5;
        assert!(report(s).validate().is_err());
    }

    #[test]
    fn save_json_is_deterministic_and_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = report([0.1, 0.2, 0.3, 1.7, 0.5, 0.6, 0.7, 0.8, 0.9]);
        r.context.per_class_k.insert(0, 2);
        r.context.per_class_k.insert(1, 3);
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        save_report(&r, &a, ReportFormat::Json).unwrap();
        save_report(&r, &b, ReportFormat::Json).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(load_report(&a).unwrap(), r);
    }

    proptest! {
        #[test]
        fn json_roundtrip_is_bit_exact(scores in prop::array::uniform9(0.0f64..1.0), seed: u64, loss in prop::option::of(0.0f64..10.0)) {
            let mut r = report(scores);
            r.seed = seed;
            r.val_loss = loss;
            let back: ScoreReport = serde_json::from_str(&r.to_json()).unwrap();
            prop_assert_eq!(back.to_json(), r.to_json());
            for (a, b) in back.scores.to_array().iter().zip(r.scores.to_array()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
