use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use super::LabelledData;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("malformed IDX at byte {offset}: {reason}")]
    MalformedIdx { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("label column {0} not found")]
    MissingLabelColumn(String),
    #[error("no data rows")]
    Empty,
}

fn malformed(offset: usize, reason: impl Into<String>) -> IdxError {
    IdxError::MalformedIdx {
        offset,
        reason: reason.into(),
    }
}

/// Parses an unsigned-byte IDX buffer into its dimensions and payload.
pub fn read_idx(bytes: &[u8], expected_rank: u8) -> Result<(Vec<usize>, &[u8]), IdxError> {
    if bytes.len() < 4 {
        return Err(malformed(0, "header shorter than 4 bytes"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(malformed(0, "magic must start with two zero bytes"));
    }
    if bytes[2] != 0x08 {
        return Err(malformed(2, format!("element type 0x{:02x} is not unsigned byte", bytes[2])));
    }
    if bytes[3] != expected_rank {
        return Err(malformed(3, format!("rank {} where {} was expected", bytes[3], expected_rank)));
    }
    let rank = expected_rank as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(malformed(bytes.len(), "truncated dimension header"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|d| {
            let at = 4 + 4 * d;
            u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize
        })
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| malformed(4, "dimension product overflows"))?;
    let payload = &bytes[header..];
    if payload.len() < count {
        return Err(malformed(bytes.len(), format!("expected {count} data bytes, found {}", payload.len())));
    }
    if payload.len() > count {
        return Err(malformed(header + count, "trailing bytes after data"));
    }
    Ok((dims, payload))
}

/// Loads an image file (magic `0x00000803`) and its label file (magic
/// `0x00000801`). Pixels are scaled to `[0, 1]` and each image becomes one
/// column.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabelledData, IdxError> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;
    let (dims, pixels) = read_idx(&image_bytes, 3)?;
    let (ldims, labels) = read_idx(&label_bytes, 1)?;
    if dims[0] != ldims[0] {
        return Err(malformed(
            4,
            format!("{} images but {} labels", dims[0], ldims[0]),
        ));
    }
    let n = dims[0];
    let p = dims[1] * dims[2];
    let points = DMatrix::from_fn(p, n, |r, c| pixels[c * p + r] as f64 / 255.0);
    Ok(LabelledData {
        points,
        labels: labels.iter().map(|&l| l as usize).collect(),
    })
}

/// Which column of a CSV file holds the class label.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
    Last,
}

/// Loads numeric features from a CSV file. Labels are parsed as integers
/// when every label is one, otherwise mapped to ids in order of first
/// appearance.
pub fn load_csv(path: &Path, label: &LabelColumn, has_header: bool) -> Result<LabelledData, LoadError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let label_index = match label {
        LabelColumn::Index(i) => Some(*i),
        LabelColumn::Last => None,
        LabelColumn::Name(name) => {
            if !has_header {
                return Err(LoadError::MissingLabelColumn(name.clone()));
            }
            let headers = reader.headers()?;
            Some(
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| LoadError::MissingLabelColumn(name.clone()))?,
            )
        }
    };
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let li = label_index.unwrap_or(record.len().saturating_sub(1));
        if li >= record.len() {
            return Err(LoadError::MissingLabelColumn(li.to_string()));
        }
        let mut values = Vec::with_capacity(record.len().saturating_sub(1));
        for (c, field) in record.iter().enumerate() {
            if c == li {
                raw_labels.push(field.to_string());
                continue;
            }
            let v: f64 = field.parse().map_err(|_| LoadError::BadRow {
                row,
                reason: format!("column {c}: {field:?} is not a number"),
            })?;
            values.push(v);
        }
        if let Some(first) = features.first() {
            if first.len() != values.len() {
                return Err(LoadError::BadRow {
                    row,
                    reason: format!("{} features where {} expected", values.len(), first.len()),
                });
            }
        }
        features.push(values);
    }
    if features.is_empty() {
        return Err(LoadError::Empty);
    }
    let numeric: Option<Vec<usize>> = raw_labels.iter().map(|l| l.parse().ok()).collect();
    let labels = numeric.unwrap_or_else(|| {
        let mut ids = HashMap::new();
        raw_labels
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(l.clone()).or_insert(next)
            })
            .collect()
    });
    let p = features[0].len();
    let points = DMatrix::from_fn(p, features.len(), |r, c| features[c][r]);
    Ok(LabelledData { points, labels })
}
