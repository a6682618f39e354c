//! Domain containers shared by every stage: dense matrices, input and latent
//! datasets, prototype sets, and score reports.
//!
//! All arithmetic is f64 regardless of the dtype a tensor had on disk.

mod manifest;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{
    load_dataset, load_latent, load_prototypes, save_dataset, save_latent, save_prototypes,
    ByteOrder, DType, LabelSource, Manifest, TensorEntry,
};
pub use report::{
    load_report, render_markdown, save_report, save_reports, MetricScores, ReportFormat,
    RunContext, ScoreReport, METRIC_NAMES,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file for `{field}`: {path}")]
    MissingFile { field: String, path: String },
    #[error("shape mismatch in `{field}`: {detail}")]
    ShapeMismatch { field: String, detail: String },
    #[error("non-finite value in `{field}` at row {row}, column {col}")]
    NonFiniteValue { field: String, row: usize, col: usize },
    #[error("invalid `{field}`: {detail}")]
    Invalid { field: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed csv in {path}: {detail}")]
    Csv { path: String, detail: String },
}

impl DataError {
    pub(crate) fn invalid(field: &str, detail: impl Into<String>) -> Self {
        DataError::Invalid {
            field: field.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn shape(field: &str, detail: impl Into<String>) -> Self {
        DataError::ShapeMismatch {
            field: field.to_string(),
            detail: detail.into(),
        }
    }
}

/// Dense row-major matrix of f64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(DataError::shape(
                "matrix",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row vectors, all of width `cols`.
    pub fn from_rows<R: AsRef<[f64]>>(cols: usize, rows: &[R]) -> Result<Self, DataError> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(DataError::shape(
                    "matrix",
                    format!("row {i} has width {}, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + Clone + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Appends the rows of `other`; widths must agree.
    pub fn append(&mut self, other: &Matrix) -> Result<(), DataError> {
        if other.cols != self.cols {
            return Err(DataError::shape(
                "matrix",
                format!("cannot append width {} to width {}", other.cols, self.cols),
            ));
        }
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
        Ok(())
    }

    /// Position of the first NaN/Inf, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.cols.max(1), p % self.cols.max(1)))
    }

    pub(crate) fn check_finite(&self, field: &str) -> Result<(), DataError> {
        match self.first_non_finite() {
            Some((row, col)) => Err(DataError::NonFiniteValue {
                field: field.to_string(),
                row,
                col,
            }),
            None => Ok(()),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Input-space samples with ground-truth labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDataset {
    pub samples: Matrix,
    pub sample_ids: Vec<String>,
    pub labels: Vec<usize>,
}

impl InputDataset {
    /// Validates shape and finiteness. Missing ids default to the row index.
    pub fn new(
        samples: Matrix,
        labels: Vec<usize>,
        sample_ids: Option<Vec<String>>,
    ) -> Result<Self, DataError> {
        let n = samples.nrows();
        if n < 2 {
            return Err(DataError::shape("samples", format!("need N >= 2, got {n}")));
        }
        if samples.ncols() < 1 {
            return Err(DataError::shape("samples", "need d >= 1"));
        }
        if labels.len() != n {
            return Err(DataError::shape(
                "labels",
                format!("{} labels for {n} samples", labels.len()),
            ));
        }
        let sample_ids = match sample_ids {
            Some(ids) if ids.len() != n => {
                return Err(DataError::shape(
                    "sample_ids",
                    format!("{} ids for {n} samples", ids.len()),
                ))
            }
            Some(ids) => ids,
            None => default_ids(n),
        };
        samples.check_finite("samples")?;
        Ok(InputDataset {
            samples,
            sample_ids,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Mean over samples of (max - min) across each sample's features.
    pub fn average_sample_range(&self) -> f64 {
        average_row_range(&self.samples)
    }
}

pub(crate) fn average_row_range(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let total: f64 = m
        .rows()
        .map(|r| {
            let (lo, hi) = r
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            hi - lo
        })
        .sum();
    total / m.nrows() as f64
}

pub(crate) fn default_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Latent vectors `z_i = f(x_i)` aligned with their input samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentDataset {
    pub vectors: Matrix,
    pub labels: Vec<usize>,
    pub source_ids: Vec<String>,
}

impl LatentDataset {
    pub fn new(
        vectors: Matrix,
        labels: Vec<usize>,
        source_ids: Option<Vec<String>>,
    ) -> Result<Self, DataError> {
        let n = vectors.nrows();
        if vectors.ncols() < 1 {
            return Err(DataError::shape("latents", "need n >= 1"));
        }
        if labels.len() != n {
            return Err(DataError::shape(
                "labels",
                format!("{} labels for {n} latent vectors", labels.len()),
            ));
        }
        let source_ids = match source_ids {
            Some(ids) if ids.len() != n => {
                return Err(DataError::shape(
                    "source_ids",
                    format!("{} ids for {n} latent vectors", ids.len()),
                ))
            }
            Some(ids) => ids,
            None => default_ids(n),
        };
        vectors.check_finite("latents")?;
        Ok(LatentDataset {
            vectors,
            labels,
            source_ids,
        })
    }

    /// Pairs encoder output with the dataset it came from.
    pub fn from_encoded(data: &InputDataset, vectors: Matrix) -> Result<Self, DataError> {
        if vectors.nrows() != data.len() {
            return Err(DataError::shape(
                "latents",
                format!("{} rows for {} samples", vectors.nrows(), data.len()),
            ));
        }
        Self::new(vectors, data.labels.clone(), Some(data.sample_ids.clone()))
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Latent-space prototypes under evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub prototypes: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_hint: Option<Vec<usize>>,
}

impl PrototypeSet {
    pub fn new(prototypes: Matrix, class_hint: Option<Vec<usize>>) -> Result<Self, DataError> {
        if prototypes.nrows() < 1 {
            return Err(DataError::shape("prototypes", "need M >= 1"));
        }
        if let Some(h) = &class_hint {
            if h.len() != prototypes.nrows() {
                return Err(DataError::shape(
                    "class_hint",
                    format!("{} hints for {} prototypes", h.len(), prototypes.nrows()),
                ));
            }
        }
        prototypes.check_finite("prototypes")?;
        Ok(PrototypeSet {
            prototypes,
            class_hint,
        })
    }

    pub fn len(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    pub fn get(&self, j: usize) -> &[f64] {
        self.prototypes.row(j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_valid_dataset() {
        let m = Matrix::new(2, 3, vec![0.0; 6]).unwrap();
        let ds = InputDataset::new(m, vec![0, 1], None).unwrap();
        assert_eq!((ds.len(), ds.dim()), (2, 3));
        assert_eq!(ds.sample_ids, vec!["0", "1"]);
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let m = Matrix::new(2, 3, vec![0.0; 6]).unwrap();
        let err = InputDataset::new(m, vec![0], None).unwrap_err();
        assert!(matches!(err, DataError::ShapeMismatch { ref field, .. } if field == "labels"));
    }

    #[test]
    fn nan_is_rejected_with_position() {
        let m = Matrix::new(2, 2, vec![0.0, 1.0, f64::NAN, 2.0]).unwrap();
        match InputDataset::new(m, vec![0, 1], None).unwrap_err() {
            DataError::NonFiniteValue { row, col, .. } => assert_eq!((row, col), (1, 0)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn single_sample_is_rejected() {
        let m = Matrix::new(1, 1, vec![0.0]).unwrap();
        assert!(InputDataset::new(m, vec![0], None).is_err());
    }

    #[test]
    fn average_range_is_per_row() {
        let m = Matrix::from_rows(3, &[[0.0, 2.0, 1.0], [5.0, 5.0, 1.0]]).unwrap();
        assert_eq!(average_row_range(&m), 3.0);
    }

    #[test]
    fn prototype_hint_length_checked() {
        let m = Matrix::zeros(2, 2);
        assert!(PrototypeSet::new(m.clone(), Some(vec![0])).is_err());
        assert!(PrototypeSet::new(m, Some(vec![0, 1])).is_ok());
        assert!(PrototypeSet::new(Matrix::zeros(0, 2), None).is_err());
    }
}
