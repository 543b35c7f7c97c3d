use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use mdaml_core::data::{BenchmarkReport, Normalizer};
use mdaml_core::model::{AnchorModel, FitReport, MdamlParams};
use mdaml_core::spd::SpdMatrix;
use mdaml_core::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Dense matrix stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Data(format!(
                "matrix declares {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Everything `train` learns, in a language-neutral layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub metric: MatrixJson,
    pub centers: MatrixJson,
    pub weights: MatrixJson,
    pub normalizer: Normalizer,
    pub class_names: Option<Vec<String>>,
    pub params: MdamlParams,
    pub n_triplets: usize,
    pub report: FitReport,
}

impl ModelFile {
    pub fn new(
        metric: &SpdMatrix,
        anchors: &AnchorModel,
        normalizer: Normalizer,
        class_names: Option<Vec<String>>,
        params: MdamlParams,
        n_triplets: usize,
        report: FitReport,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            metric: metric.as_matrix().into(),
            centers: (&anchors.centers).into(),
            weights: (&anchors.weights).into(),
            normalizer,
            class_names,
            params,
            n_triplets,
            report,
        }
    }

    /// Reads a model file, checking the schema version and that the metric is SPD.
    pub fn load(path: &Path) -> Result<(Self, SpdMatrix)> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let model: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if model.schema_version != SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "unsupported model schema version {}",
                model.schema_version
            )));
        }
        let metric = SpdMatrix::new(model.metric.to_matrix()?)?;
        Ok((model, metric))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub report: BenchmarkReport,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invariant(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// One row per trial and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub method: String,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_triplets: usize,
    pub outer_iters: usize,
    pub converged: bool,
}

/// One row per trial, method and outer iteration (entry 0 is the initial point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub trial: usize,
    pub method: String,
    pub outer: usize,
    pub objective: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn trial_rows(report: &BenchmarkReport) -> Vec<TrialRow> {
    report
        .trials
        .iter()
        .map(|t| TrialRow {
            trial: t.trial,
            method: t.method.to_string(),
            accuracy: t.accuracy,
            n_train: t.n_train,
            n_test: t.n_test,
            n_triplets: t.n_triplets,
            outer_iters: t.outer_iters,
            converged: t.converged,
        })
        .collect()
}

pub fn trace_rows(report: &BenchmarkReport) -> Vec<TraceRow> {
    report
        .trials
        .iter()
        .flat_map(|t| {
            t.objective_per_outer
                .iter()
                .enumerate()
                .map(move |(outer, &objective)| TraceRow {
                    trial: t.trial,
                    method: t.method.to_string(),
                    outer,
                    objective,
                })
        })
        .collect()
}

/// One row per sweep value and method; failed values carry the error instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub method: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub status: String,
}
