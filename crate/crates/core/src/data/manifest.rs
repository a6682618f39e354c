//! JSON manifests pointing at raw little-endian tensor payloads, plus a CSV
//! fallback (header row, one sample per line, final column `label`).
//!
//! ```json
//! {
//!   "tensors": [
//!     {"name": "samples", "dtype": "f32", "shape": [200, 96],
//!      "file": "samples.bin", "byte_order": "little"}
//!   ],
//!   "labels": [0, 1, ...]
//! }
//! ```
//!
//! Payload paths are resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, InputDataset, LatentDataset, Matrix, PrototypeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    #[default]
    Little,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub file: String,
    #[serde(default)]
    pub byte_order: ByteOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelSource {
    Inline(Vec<i64>),
    Csv {
        csv: String,
        #[serde(default = "default_label_column")]
        column: String,
    },
}

fn default_label_column() -> String {
    "label".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_ids: Option<Vec<String>>,
    /// Free-form provenance (generator config, ground-truth shapes, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = read_text(path, "manifest")?;
        serde_json::from_str(&text).map_err(|source| DataError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    fn tensor(&self, name: &str) -> Result<&TensorEntry, DataError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| DataError::invalid("tensors", format!("no tensor named `{name}`")))
    }
}

fn read_text(path: &Path, field: &str) -> Result<String, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile {
            field: field.to_string(),
            path: path.display().to_string(),
        });
    }
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn read_matrix(dir: &Path, entry: &TensorEntry) -> Result<Matrix, DataError> {
    let (rows, cols) = match entry.shape.as_slice() {
        [r, c] => (*r, *c),
        [r] => (*r, 1),
        s => {
            return Err(DataError::shape(
                &entry.name,
                format!("expected a rank-2 shape, got {s:?}"),
            ))
        }
    };
    let path = dir.join(&entry.file);
    if !path.exists() {
        return Err(DataError::MissingFile {
            field: entry.name.clone(),
            path: path.display().to_string(),
        });
    }
    let bytes = fs::read(&path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let expected = rows * cols * entry.dtype.width();
    if bytes.len() != expected {
        return Err(DataError::shape(
            &entry.name,
            format!(
                "shape {rows}x{cols} of {:?} needs {expected} bytes, payload has {}",
                entry.dtype,
                bytes.len()
            ),
        ));
    }
    let data: Vec<f64> = match entry.dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let m = Matrix::new(rows, cols, data)?;
    m.check_finite(&entry.name)?;
    Ok(m)
}

fn write_matrix(dir: &Path, name: &str, m: &Matrix, dtype: DType) -> Result<TensorEntry, DataError> {
    let file = format!("{name}.bin");
    let mut bytes = Vec::with_capacity(m.as_slice().len() * dtype.width());
    for &v in m.as_slice() {
        match dtype {
            DType::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    let path = dir.join(&file);
    fs::write(&path, bytes).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(TensorEntry {
        name: name.to_string(),
        dtype,
        shape: vec![m.nrows(), m.ncols()],
        file,
        byte_order: ByteOrder::Little,
    })
}

fn to_labels(raw: Vec<i64>, field: &str) -> Result<Vec<usize>, DataError> {
    raw.into_iter()
        .enumerate()
        .map(|(i, l)| {
            usize::try_from(l)
                .map_err(|_| DataError::invalid(field, format!("negative label {l} at row {i}")))
        })
        .collect()
}

fn read_labels(dir: &Path, src: &LabelSource) -> Result<Vec<usize>, DataError> {
    match src {
        LabelSource::Inline(v) => to_labels(v.clone(), "labels"),
        LabelSource::Csv { csv, column } => {
            let path = dir.join(csv);
            let table = read_csv(&path, "labels")?;
            let idx = table
                .header
                .iter()
                .position(|h| h == column)
                .ok_or_else(|| DataError::invalid("labels", format!("no column `{column}`")))?;
            let raw = table
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| parse_label(&r[idx], i, &path))
                .collect::<Result<Vec<_>, _>>()?;
            to_labels(raw, "labels")
        }
    }
}

struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path, field: &str) -> Result<CsvTable, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile {
            field: field.to_string(),
            path: path.display().to_string(),
        });
    }
    let csv_err = |e: csv::Error| DataError::Csv {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(csv_err)?;
    Ok(CsvTable { header, rows })
}

fn parse_label(s: &str, row: usize, path: &Path) -> Result<i64, DataError> {
    s.parse::<i64>().map_err(|_| DataError::Csv {
        path: path.display().to_string(),
        detail: format!("row {row}: label `{s}` is not an integer"),
    })
}

/// Parses a CSV whose final column is optionally `label`.
fn read_csv_matrix(path: &Path, field: &str) -> Result<(Matrix, Option<Vec<i64>>), DataError> {
    let table = read_csv(path, field)?;
    let has_label = table.header.last().map(String::as_str) == Some("label");
    let width = table.header.len() - usize::from(has_label);
    let mut data = Vec::with_capacity(table.rows.len() * width);
    let mut labels = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        for (j, cell) in row[..width].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DataError::Csv {
                path: path.display().to_string(),
                detail: format!("row {i}, column {j}: `{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue {
                    field: field.to_string(),
                    row: i,
                    col: j,
                });
            }
            data.push(v);
        }
        if has_label {
            labels.push(parse_label(&row[width], i, path)?);
        }
    }
    let m = Matrix::new(table.rows.len(), width, data)?;
    Ok((m, has_label.then_some(labels)))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads an input dataset from a manifest (tensor `samples`) or a CSV file.
pub fn load_dataset(path: &Path) -> Result<InputDataset, DataError> {
    if is_csv(path) {
        let (m, labels) = read_csv_matrix(path, "samples")?;
        let labels = labels.ok_or_else(|| DataError::invalid("labels", "csv has no `label` column"))?;
        return InputDataset::new(m, to_labels(labels, "labels")?, None);
    }
    let manifest = Manifest::read(path)?;
    let dir = base_dir(path);
    let samples = read_matrix(&dir, manifest.tensor("samples")?)?;
    let labels = manifest
        .labels
        .as_ref()
        .ok_or_else(|| DataError::invalid("labels", "manifest declares no labels"))?;
    let labels = read_labels(&dir, labels)?;
    InputDataset::new(samples, labels, manifest.sample_ids)
}

/// Loads a latent dataset from a manifest (tensor `latents`) or a CSV file.
pub fn load_latent(path: &Path) -> Result<LatentDataset, DataError> {
    if is_csv(path) {
        let (m, labels) = read_csv_matrix(path, "latents")?;
        let labels = labels.ok_or_else(|| DataError::invalid("labels", "csv has no `label` column"))?;
        return LatentDataset::new(m, to_labels(labels, "labels")?, None);
    }
    let manifest = Manifest::read(path)?;
    let dir = base_dir(path);
    let vectors = read_matrix(&dir, manifest.tensor("latents")?)?;
    let labels = manifest
        .labels
        .as_ref()
        .ok_or_else(|| DataError::invalid("labels", "manifest declares no labels"))?;
    let labels = read_labels(&dir, labels)?;
    LatentDataset::new(vectors, labels, manifest.sample_ids)
}

/// Loads prototypes (tensor `prototypes`); labels, when present, become the
/// class hint.
pub fn load_prototypes(path: &Path) -> Result<PrototypeSet, DataError> {
    if is_csv(path) {
        let (m, labels) = read_csv_matrix(path, "prototypes")?;
        let hint = labels.map(|l| to_labels(l, "labels")).transpose()?;
        return PrototypeSet::new(m, hint);
    }
    let manifest = Manifest::read(path)?;
    let dir = base_dir(path);
    let m = read_matrix(&dir, manifest.tensor("prototypes")?)?;
    let hint = manifest
        .labels
        .as_ref()
        .map(|src| read_labels(&dir, src))
        .transpose()?;
    PrototypeSet::new(m, hint)
}

fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), DataError> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|source| DataError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn ensure_dir(path: &Path) -> Result<PathBuf, DataError> {
    let dir = base_dir(path);
    fs::create_dir_all(&dir).map_err(|source| DataError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(dir)
}

fn labels_json(labels: &[usize]) -> LabelSource {
    LabelSource::Inline(labels.iter().map(|&l| l as i64).collect())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "tensor".to_string())
}

/// Writes `samples` as `<stem>.samples.bin` next to the manifest.
pub fn save_dataset(
    data: &InputDataset,
    path: &Path,
    dtype: DType,
    metadata: Option<serde_json::Value>,
) -> Result<(), DataError> {
    let dir = ensure_dir(path)?;
    let entry = write_matrix(&dir, &format!("{}.samples", file_stem(path)), &data.samples, dtype)?;
    let manifest = Manifest {
        tensors: vec![TensorEntry {
            name: "samples".into(),
            ..entry
        }],
        labels: Some(labels_json(&data.labels)),
        sample_ids: Some(data.sample_ids.clone()),
        metadata,
    };
    write_manifest(path, &manifest)
}

pub fn save_latent(data: &LatentDataset, path: &Path, dtype: DType) -> Result<(), DataError> {
    let dir = ensure_dir(path)?;
    let entry = write_matrix(&dir, &format!("{}.latents", file_stem(path)), &data.vectors, dtype)?;
    let manifest = Manifest {
        tensors: vec![TensorEntry {
            name: "latents".into(),
            ..entry
        }],
        labels: Some(labels_json(&data.labels)),
        sample_ids: Some(data.source_ids.clone()),
        metadata: None,
    };
    write_manifest(path, &manifest)
}

pub fn save_prototypes(proto: &PrototypeSet, path: &Path, dtype: DType) -> Result<(), DataError> {
    let dir = ensure_dir(path)?;
    let entry = write_matrix(
        &dir,
        &format!("{}.prototypes", file_stem(path)),
        &proto.prototypes,
        dtype,
    )?;
    let manifest = Manifest {
        tensors: vec![TensorEntry {
            name: "prototypes".into(),
            ..entry
        }],
        labels: proto.class_hint.as_deref().map(labels_json),
        sample_ids: None,
        metadata: None,
    };
    write_manifest(path, &manifest)
}
