//! Tabular datasets with a binary protected column, and their on-disk form:
//! a CSV with header `A,x1..xm,y` plus a JSON sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use numcore::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Whether a dataset was generated with the protected attribute's causal
/// influence active (`Biased`) or removed (`Fair`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Biased,
    Fair,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMeta {
    pub seed: u64,
    pub scm_hash: String,
    /// Real values of the protected attribute for groups 0 and 1.
    pub a0: f64,
    pub a1: f64,
    pub twin_of: Option<String>,
    pub noise_file: Option<String>,
    /// Threshold on the continuous target that produced `labels`.
    pub threshold: f64,
    pub mode: Mode,
    /// Fingerprint of the exogenous draws this dataset was built from.
    pub noise_fingerprint: Option<String>,
    pub degenerate_labels: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: String,
    /// Protected group id per row, 0 or 1.
    pub groups: Vec<u8>,
    /// `n x m` feature matrix.
    pub features: Tensor,
    pub labels: Vec<u8>,
    /// Continuous target before binarization (empty when unknown).
    pub target: Vec<f64>,
    pub meta: DatasetMeta,
}

/// The JSON sidecar written next to every dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema_version: u32,
    pub protected: String,
    pub target: String,
    pub seed: u64,
    pub scm_hash: String,
    pub a0: f64,
    pub a1: f64,
    pub twin_of: Option<String>,
    pub noise_file: Option<String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.groups.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n < 2 {
            return Err(Error::InvalidData(format!("{}: need at least 2 rows, got {n}", self.id)));
        }
        if self.features.rows() != n || self.labels.len() != n {
            return Err(Error::InvalidData(format!(
                "{}: column lengths disagree (groups {n}, features {}, labels {})",
                self.id,
                self.features.rows(),
                self.labels.len()
            )));
        }
        if !self.target.is_empty() && self.target.len() != n {
            return Err(Error::InvalidData(format!("{}: target length {}", self.id, self.target.len())));
        }
        if self.groups.iter().chain(&self.labels).any(|&v| v > 1) {
            return Err(Error::InvalidData(format!("{}: non-binary group or label", self.id)));
        }
        if !self.features.is_finite() {
            return Err(Error::InvalidData(format!("{}: non-finite feature", self.id)));
        }
        Ok(())
    }

    /// Rows in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            id: self.id.clone(),
            groups: rows.iter().map(|&r| self.groups[r]).collect(),
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            target: if self.target.is_empty() {
                Vec::new()
            } else {
                rows.iter().map(|&r| self.target[r]).collect()
            },
            meta: self.meta.clone(),
        }
    }

    /// Same observable content (groups, features, labels).
    pub fn same_observables(&self, other: &Dataset) -> bool {
        self.groups == other.groups && self.features == other.features && self.labels == other.labels
    }

    pub fn label_rate(&self) -> f64 {
        self.labels.iter().map(|&y| y as f64).sum::<f64>() / self.n().max(1) as f64
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            schema_version: SCHEMA_VERSION,
            protected: "A".into(),
            target: "y".into(),
            seed: self.meta.seed,
            scm_hash: self.meta.scm_hash.clone(),
            a0: self.meta.a0,
            a1: self.meta.a1,
            twin_of: self.meta.twin_of.clone(),
            noise_file: self.meta.noise_file.clone(),
        }
    }

    pub fn csv_string(&self) -> String {
        let m = self.n_features();
        let mut out = String::from("A");
        for j in 1..=m {
            out.push_str(&format!(",x{j}"));
        }
        out.push_str(",y\n");
        for i in 0..self.n() {
            out.push_str(&self.groups[i].to_string());
            for v in self.features.row(i) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push(',');
            out.push_str(&self.labels[i].to_string());
            out.push('\n');
        }
        out
    }

    /// Writes `<path>` (CSV) and `<path stem>.json` (sidecar).
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        write_file(csv_path, self.csv_string().as_bytes())?;
        let sidecar = serde_json::to_string_pretty(&self.sidecar())?;
        write_file(&sidecar_path(csv_path), sidecar.as_bytes())?;
        Ok(())
    }

    /// Reads a dataset CSV and, if present, its sidecar.
    pub fn read(csv_path: &Path) -> Result<Dataset> {
        let mut reader = csv::Reader::from_path(csv_path)
            .map_err(|e| Error::io(csv_path, e.to_string()))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::io(csv_path, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let m = header.len().saturating_sub(2);
        let expected: Vec<String> = std::iter::once("A".to_string())
            .chain((1..=m).map(|j| format!("x{j}")))
            .chain(std::iter::once("y".to_string()))
            .collect();
        if header != expected {
            return Err(Error::InvalidData(format!(
                "{}: header {header:?}, expected {expected:?}",
                csv_path.display()
            )));
        }
        let mut groups = Vec::new();
        let mut labels = Vec::new();
        let mut feats = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::io(csv_path, e.to_string()))?;
            let parse = |k: usize| -> Result<f64> {
                rec[k].trim().parse::<f64>().map_err(|_| {
                    Error::InvalidData(format!("{} row {}: bad value {:?}", csv_path.display(), line + 2, &rec[k]))
                })
            };
            groups.push(parse(0)? as u8);
            for k in 1..=m {
                feats.push(parse(k)?);
            }
            labels.push(parse(m + 1)? as u8);
        }
        let n = groups.len();
        let meta = match fs::read_to_string(sidecar_path(csv_path)) {
            Ok(text) => {
                let s: Sidecar = serde_json::from_str(&text)?;
                DatasetMeta {
                    seed: s.seed,
                    scm_hash: s.scm_hash,
                    a0: s.a0,
                    a1: s.a1,
                    twin_of: s.twin_of,
                    noise_file: s.noise_file,
                    ..DatasetMeta::default()
                }
            }
            Err(_) => DatasetMeta::default(),
        };
        let id = csv_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let ds = Dataset {
            id,
            groups,
            features: Tensor::matrix(n, m, feats)?,
            labels,
            target: Vec::new(),
            meta,
        };
        ds.validate()?;
        Ok(ds)
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e.to_string()))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e.to_string()))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e.to_string()))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Value at quantile `q` of `values` (nearest rank on the sorted copy).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    sorted[idx]
}

pub fn binarize(values: &[f64], threshold: f64) -> Vec<u8> {
    values.iter().map(|&v| u8::from(v > threshold)).collect()
}
