//! Serialization plumbing: JSON representations for matrices, CSV import and
//! export of environment-labelled samples, and atomic file writes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

/// Errors from file and format handling.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
}

/// Serde adapters storing matrices as row-major arrays of arrays and vectors
/// as flat arrays, so the JSON wire format is plain nested lists.
pub mod serde_mat {
    pub mod matrix {
        use nalgebra::DMatrix;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
            let rows: Vec<Vec<f64>> = (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect();
            rows.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
            let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
            let nrows = rows.len();
            let ncols = rows.first().map_or(0, |r| r.len());
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(serde::de::Error::custom("ragged matrix rows"));
            }
            Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
        }
    }

    pub mod vector {
        use nalgebra::DVector;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.as_slice().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
            let data: Vec<f64> = Vec::deserialize(d)?;
            Ok(DVector::from_vec(data))
        }
    }
}

/// Reads and deserializes a JSON file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let mut buf = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut buf))
        .map_err(|source| IoError::File {
            path: path.display().to_string(),
            source,
        })?;
    serde_json::from_str(&buf).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Serializes a value to pretty JSON and writes it atomically
/// (temp file in the same directory, then rename).
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let body = serde_json::to_string_pretty(value).expect("serializable value");
    write_atomic(path, body.as_bytes())
}

/// Writes bytes atomically via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let tmp = path.with_extension("tmp~");
    let run = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    run().map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Environment-labelled samples parsed from CSV, reference environment first.
pub struct EnvironmentSamples {
    /// Environment labels in estimator order (index 0 = reference).
    pub labels: Vec<String>,
    /// One `(n_e) x (p+1)` matrix per environment; response in the last column.
    pub samples: Vec<DMatrix<f64>>,
    /// Covariate column names in file order.
    pub covariates: Vec<String>,
}

/// Parses a CSV with an environment-label column and a numeric response
/// column; every other column is a covariate. The reference environment is
/// the numerically-or-lexicographically smallest label unless overridden.
pub fn read_environment_csv(
    path: &Path,
    env_column: &str,
    response_column: &str,
    reference: Option<&str>,
) -> Result<EnvironmentSamples, IoError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| IoError::Csv(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| IoError::Csv(e.to_string()))?
        .clone();
    let env_idx = headers
        .iter()
        .position(|h| h == env_column)
        .ok_or_else(|| IoError::Csv(format!("missing environment column `{env_column}`")))?;
    let y_idx = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| IoError::Csv(format!("missing response column `{response_column}`")))?;
    if env_idx == y_idx {
        return Err(IoError::Csv(
            "environment and response columns must differ".into(),
        ));
    }
    let covariate_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != env_idx && i != y_idx)
        .collect();
    if covariate_idx.is_empty() {
        return Err(IoError::Csv("no covariate columns found".into()));
    }
    let covariates: Vec<String> = covariate_idx.iter().map(|&i| headers[i].to_string()).collect();

    let mut by_env: Vec<(String, Vec<f64>)> = Vec::new();
    let width = covariate_idx.len() + 1;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IoError::Csv(e.to_string()))?;
        let label = record
            .get(env_idx)
            .ok_or_else(|| IoError::Csv(format!("row {}: short record", line + 2)))?
            .to_string();
        let mut row = Vec::with_capacity(width);
        for &i in &covariate_idx {
            row.push(parse_cell(&record, i, line, &headers)?);
        }
        row.push(parse_cell(&record, y_idx, line, &headers)?);
        match by_env.iter_mut().find(|(l, _)| *l == label) {
            Some((_, data)) => data.extend_from_slice(&row),
            None => by_env.push((label, row)),
        }
    }
    if by_env.is_empty() {
        return Err(IoError::Csv("no data rows".into()));
    }

    let reference_label = match reference {
        Some(r) => {
            if !by_env.iter().any(|(l, _)| l == r) {
                return Err(IoError::Csv(format!(
                    "reference environment `{r}` not present in the data"
                )));
            }
            r.to_string()
        }
        None => smallest_label(by_env.iter().map(|(l, _)| l.as_str())),
    };
    by_env.sort_by(|(a, _), (b, _)| compare_labels(a, b));
    if let Some(pos) = by_env.iter().position(|(l, _)| *l == reference_label) {
        let reference = by_env.remove(pos);
        by_env.insert(0, reference);
    }

    let labels = by_env.iter().map(|(l, _)| l.clone()).collect();
    let samples = by_env
        .into_iter()
        .map(|(_, data)| {
            let n = data.len() / width;
            DMatrix::from_row_slice(n, width, &data)
        })
        .collect();
    Ok(EnvironmentSamples {
        labels,
        samples,
        covariates,
    })
}

fn parse_cell(
    record: &csv::StringRecord,
    idx: usize,
    line: usize,
    headers: &csv::StringRecord,
) -> Result<f64, IoError> {
    let raw = record
        .get(idx)
        .ok_or_else(|| IoError::Csv(format!("row {}: short record", line + 2)))?;
    if raw.trim().is_empty() {
        return Err(IoError::Csv(format!(
            "row {}: missing value in column `{}`",
            line + 2,
            &headers[idx]
        )));
    }
    raw.trim().parse::<f64>().map_err(|_| {
        IoError::Csv(format!(
            "row {}: `{}` is not numeric in column `{}`",
            line + 2,
            raw,
            &headers[idx]
        ))
    })
}

/// Numeric order when every label parses as a number, lexicographic otherwise.
fn compare_labels(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

fn smallest_label<'a>(labels: impl Iterator<Item = &'a str>) -> String {
    labels
        .min_by(|a, b| compare_labels(a, b))
        .expect("non-empty")
        .to_string()
}

/// Writes per-environment samples as CSV with header `env,x1,...,xp,y`.
/// Floats use the shortest round-trip decimal form.
pub fn write_samples_csv(
    path: &Path,
    labels: &[String],
    samples: &[DMatrix<f64>],
) -> Result<(), IoError> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let p = samples.first().map_or(0, |s| s.ncols().saturating_sub(1));
        let mut header = vec!["env".to_string()];
        header.extend((1..=p).map(|i| format!("x{i}")));
        header.push("y".to_string());
        w.write_record(&header)
            .map_err(|e| IoError::Csv(e.to_string()))?;
        for (label, s) in labels.iter().zip(samples) {
            for i in 0..s.nrows() {
                let mut record = vec![label.clone()];
                record.extend((0..s.ncols()).map(|j| format!("{}", s[(i, j)])));
                w.write_record(&record)
                    .map_err(|e| IoError::Csv(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| IoError::Csv(e.to_string()))?;
    }
    write_atomic(path, &buf)
}
