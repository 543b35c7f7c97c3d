use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-12;

/// An `N × d` feature matrix (one sample per row) with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    class_names: Option<Vec<String>>,
}

impl Dataset {
    /// Labels, when present, must be contiguous ids `0..C`.
    pub fn new(features: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some((pos, _)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let row = pos % features.nrows().max(1);
            return Err(Error::Data(format!("non-finite feature in sample {row}")));
        }
        if let Some(l) = &labels {
            if l.len() != features.nrows() {
                return Err(Error::Data(format!(
                    "{} labels for {} samples",
                    l.len(),
                    features.nrows()
                )));
            }
            let classes = l.iter().max().map_or(0, |m| m + 1);
            let mut seen = vec![false; classes];
            for &c in l {
                seen[c] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::Data(format!(
                    "label ids must be contiguous; class {missing} is empty"
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        self.class_names = Some(names);
        self
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::Data("dataset has no labels".into()))
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    /// Rows `indices`, in that order. Labels are kept as-is, so a subset may
    /// use a subrange of the class ids.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.dim();
        let features = DMatrix::from_fn(indices.len(), d, |r, c| self.features[(indices[r], c)]);
        Dataset {
            features,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_names: self.class_names.clone(),
        }
    }
}

/// Which CSV column carries the class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Reads a numeric CSV table. Labels are remapped to `0..C` in order of first
/// appearance; the original strings are kept as class names.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: Option<&LabelColumn>,
    has_header: bool,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(file, label_column, has_header)
}

/// [`load_csv`] over any reader.
pub fn read_csv(
    reader: impl std::io::Read,
    label_column: Option<&LabelColumn>,
    has_header: bool,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let label_idx = match label_column {
        None => None,
        Some(LabelColumn::Index(i)) => Some(*i),
        Some(LabelColumn::Name(name)) => {
            if !has_header {
                return Err(Error::Data(format!(
                    "label column '{name}' given by name but the file has no header"
                )));
            }
            let headers = rdr.headers().map_err(|e| Error::Parse {
                row: 1,
                msg: e.to_string(),
            })?;
            Some(
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Parse {
                        row: 1,
                        msg: format!("missing label column '{name}'"),
                    })?,
            )
        }
    };

    let mut width = None;
    let mut values = Vec::new();
    let mut rows = 0usize;
    let mut raw_labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    row: line,
                    msg: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        if let Some(li) = label_idx {
            if li >= record.len() {
                return Err(Error::Parse {
                    row: line,
                    msg: format!("missing label column {li}"),
                });
            }
        }
        for (c, field) in record.iter().enumerate() {
            if Some(c) == label_idx {
                raw_labels.push(field.to_string());
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: line,
                msg: format!("non-numeric feature '{field}' in column {c}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    msg: format!("non-finite feature '{field}' in column {c}"),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data("no data rows".into()));
    }
    let d = width.unwrap_or(0) - usize::from(label_idx.is_some());
    let features = DMatrix::from_row_slice(rows, d, &values);

    if label_idx.is_none() {
        return Dataset::new(features, None);
    }
    let mut ids = HashMap::new();
    let mut names = Vec::new();
    let labels = raw_labels
        .into_iter()
        .map(|s| {
            *ids.entry(s.clone()).or_insert_with(|| {
                names.push(s);
                names.len() - 1
            })
        })
        .collect();
    Ok(Dataset::new(features, Some(labels))?.with_class_names(names))
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let n = train.n();
        if n < 2 {
            return Err(Error::Data(format!(
                "normalizer needs at least 2 samples, got {n}"
            )));
        }
        let x = train.features();
        let mut mean = Vec::with_capacity(train.dim());
        let mut std = Vec::with_capacity(train.dim());
        for col in x.column_iter() {
            let mu = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
            mean.push(mu);
            std.push(var.sqrt().max(STD_FLOOR));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data)?;
        let mut out = data.clone();
        for (c, mut col) in out.features.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data)?;
        let mut out = data.clone();
        for (c, mut col) in out.features.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        Ok(out)
    }

    pub fn apply_row(&self, x: &RowDVector<f64>) -> RowDVector<f64> {
        RowDVector::from_fn(x.len(), |_, c| (x[c] - self.mean[c]) / self.std[c])
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "normalizer fitted on {} features, data has {}",
                self.mean.len(),
                data.dim()
            )));
        }
        Ok(())
    }
}

/// Convenience wrapper: fit on `train`.
pub fn fit_normalizer(train: &Dataset) -> Result<Normalizer> {
    Normalizer::fit(train)
}
