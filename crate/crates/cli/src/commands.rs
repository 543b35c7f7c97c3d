use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use mdaml_core::data::{
    generate_triplets, load_csv, run_benchmark, BenchmarkReport, Dataset, MethodSummary,
    Normalizer, TrialTiming,
};
use mdaml_core::diagnostics::{gradient_check, manifold_check, GradCheckReport, ManifoldReport};
use mdaml_core::model::{fit, AnchorModel, MdamlParams, Problem};
use mdaml_core::spd::SpdMatrix;
use mdaml_core::{Error, Result};

use crate::config::{RunConfig, SweepParam};
use crate::output::{
    trace_rows, trial_rows, write_csv, write_json, BenchmarkFile, ModelFile, SweepRow,
    SCHEMA_VERSION,
};
use crate::CliError;

pub const MODEL_FILE: &str = "model.json";
pub const BENCHMARK_JSON: &str = "benchmark.json";
pub const BENCHMARK_CSV: &str = "benchmark.csv";
pub const TRACES_CSV: &str = "traces.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const GRADCHECK_JSON: &str = "gradcheck.json";
pub const TIMING_JSON: &str = "timing.json";

fn prepare_out(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn load_labelled(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.data_path()?;
    let label = cfg
        .label
        .as_ref()
        .ok_or_else(|| Error::Config("no label column given (--label or config)".into()))?;
    let data = load_csv(path, Some(label), cfg.header)?;
    log::info!(
        "loaded {}: {} samples, {} features, {} classes",
        path.display(),
        data.n(),
        data.dim(),
        data.num_classes()
    );
    Ok(data)
}

#[derive(Debug, Serialize)]
struct TrainTiming {
    wall_time_seconds: f64,
    fit_seconds: f64,
}

/// Fits on the whole (normalized) dataset and writes `model.json`.
pub fn train(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    let start = Instant::now();
    cfg.validate_common()?;
    let params = cfg.params(false)?;
    let data = load_labelled(cfg)?;
    let normalizer = Normalizer::fit(&data)?;
    let normalized = normalizer.apply(&data)?;
    let trips = generate_triplets(&normalized, &cfg.triplets, cfg.seed)?;
    let fitted = with_pool(cfg.workers, || fit(&normalized, &trips, &params))??;
    let out = prepare_out(&cfg.out)?;
    let model = ModelFile::new(
        &fitted.metric,
        &fitted.anchors,
        normalizer,
        data.class_names().map(<[String]>::to_vec),
        params,
        trips.len(),
        fitted.report.clone(),
    );
    write_json(&out.join(MODEL_FILE), &model)?;
    write_json(
        &out.join(TIMING_JSON),
        &TrainTiming {
            wall_time_seconds: start.elapsed().as_secs_f64(),
            fit_seconds: fitted.report.wall_time_seconds,
        },
    )?;
    println!(
        "trained: {} outer iterations, objective {:.6e}, {} triplets -> {}",
        fitted.report.outer_iters,
        fitted
            .report
            .objective_per_outer
            .last()
            .copied()
            .unwrap_or(f64::NAN),
        trips.len(),
        out.join(MODEL_FILE).display()
    );
    Ok(())
}

fn print_summaries(summaries: &[MethodSummary]) {
    for s in summaries {
        println!("{:<13} {:.4} ± {:.4}", s.method.name(), s.mean, s.std);
    }
}

/// Runs the trial protocol and writes JSON, per-trial CSV and objective traces.
pub fn benchmark(cfg: &RunConfig) -> std::result::Result<BenchmarkReport, CliError> {
    cfg.validate_common()?;
    let bench = cfg.benchmark()?;
    let data = load_labelled(cfg)?;
    let report = with_pool(cfg.workers, || run_benchmark(&data, &bench))??;
    let out = prepare_out(&cfg.out)?;
    write_json(
        &out.join(BENCHMARK_JSON),
        &BenchmarkFile {
            schema_version: SCHEMA_VERSION,
            report: report.clone(),
        },
    )?;
    write_csv(&out.join(BENCHMARK_CSV), &trial_rows(&report))?;
    write_csv(&out.join(TRACES_CSV), &trace_rows(&report))?;
    write_json(&out.join(TIMING_JSON), &report.timing)?;
    if let Some(t) = &report.tuning {
        println!("tuned on trial 0: K = {}, lambda1 = {}", t.k, t.lambda1);
    }
    print_summaries(&report.summaries);
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub status: String,
    pub summaries: Vec<MethodSummary>,
    pub timing: Vec<TrialTiming>,
}

fn with_value(cfg: &RunConfig, param: SweepParam, value: f64) -> Result<RunConfig> {
    let mut c = cfg.clone();
    c.tuning = None;
    match param {
        SweepParam::K => {
            if !(value >= 1.0 && value.fract() == 0.0 && value <= usize::MAX as f64) {
                return Err(Error::Config(format!(
                    "K must be a positive integer, got {value}"
                )));
            }
            c.k = Some(value as usize);
        }
        SweepParam::Lambda1 => c.lambda1 = Some(value),
        SweepParam::Lambda2 => c.lambda2 = value,
        SweepParam::Eta => c.eta = value,
    }
    Ok(c)
}

/// Benchmarks every value of one parameter with the rest held fixed. Values
/// that fail are reported in the table and the remaining ones still run.
pub fn sweep(cfg: &RunConfig) -> std::result::Result<Vec<SweepPoint>, CliError> {
    cfg.validate_common()?;
    let spec = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("no sweep given (--param/--values or config)".into()))?;
    if spec.values.is_empty() {
        return Err(Error::Config("sweep values must be nonempty".into()).into());
    }
    let data = load_labelled(cfg)?;
    let mut points = Vec::new();
    let mut rows = Vec::new();
    let mut first_failure: Option<Error> = None;
    for &value in &spec.values {
        let outcome = with_value(cfg, spec.parameter, value)
            .and_then(|c| c.benchmark())
            .and_then(|b| with_pool(cfg.workers, || run_benchmark(&data, &b))?);
        match outcome {
            Ok(report) => {
                for s in &report.summaries {
                    rows.push(SweepRow {
                        parameter: spec.parameter.name().into(),
                        value,
                        method: s.method.to_string(),
                        mean: Some(s.mean),
                        std: Some(s.std),
                        min: Some(s.min),
                        max: Some(s.max),
                        status: "ok".into(),
                    });
                }
                println!("{} = {value}", spec.parameter.name());
                print_summaries(&report.summaries);
                points.push(SweepPoint {
                    value,
                    status: "ok".into(),
                    summaries: report.summaries,
                    timing: report.timing,
                });
            }
            Err(e) => {
                log::error!("{} = {value}: {e}", spec.parameter.name());
                let status = e.to_string();
                rows.push(SweepRow {
                    parameter: spec.parameter.name().into(),
                    value,
                    method: String::new(),
                    mean: None,
                    std: None,
                    min: None,
                    max: None,
                    status: status.clone(),
                });
                points.push(SweepPoint {
                    value,
                    status,
                    summaries: Vec::new(),
                    timing: Vec::new(),
                });
                first_failure.get_or_insert(e);
            }
        }
    }
    let out = prepare_out(&cfg.out)?;
    write_csv(&out.join(SWEEP_CSV), &rows)?;
    let timing: Vec<(f64, Vec<TrialTiming>)> =
        points.iter().map(|p| (p.value, p.timing.clone())).collect();
    write_json(
        &out.join(SWEEP_JSON),
        &points
            .iter()
            .map(|p| SweepPoint {
                timing: Vec::new(),
                ..p.clone()
            })
            .collect::<Vec<_>>(),
    )?;
    write_json(&out.join(TIMING_JSON), &timing)?;
    match first_failure {
        Some(e) => Err(CliError::Sweep {
            failed: points.iter().filter(|p| p.status != "ok").count(),
            first: e,
        }),
        None => Ok(points),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckFile {
    pub gradient: GradCheckReport,
    pub manifold: ManifoldReport,
}

/// Finite-difference gradient suite plus manifold property suite.
/// `corrupt` scales the analytic gradient, as a negative control.
pub fn gradcheck(
    cfg: &RunConfig,
    corrupt: Option<f64>,
) -> std::result::Result<GradcheckFile, CliError> {
    let g = &cfg.gradcheck;
    if g.instances == 0 || g.manifold_cases == 0 || !(g.tolerance > 0.0) {
        return Err(Error::Config(
            "gradcheck needs positive instances, cases and tolerance".into(),
        )
        .into());
    }
    let hook = |p: &Problem<'_>, m: &SpdMatrix, a: &AnchorModel, q: &MdamlParams| {
        Ok(p.euclidean_gradient(m, a, q)? * corrupt.unwrap_or(1.0))
    };
    let gradient = gradient_check(
        cfg.seed,
        g.instances,
        g.tolerance,
        corrupt.map(|_| &hook as _),
    )?;
    let manifold = manifold_check(cfg.seed, g.manifold_cases)?;
    println!(
        "gradient: max relative error {:.3e} over {} cases (tolerance {:.0e})",
        gradient.max_relative_error,
        gradient.cases.len(),
        gradient.tolerance
    );
    println!(
        "manifold: retract(W,0) {:.3e}, projection asymmetry {:.3e}, min retraction eigenvalue {:.3e}, transport identity {:.3e} over {} cases",
        manifold.retract_zero_error,
        manifold.projection_asymmetry,
        manifold.retraction_min_eigenvalue,
        manifold.transport_identity_error,
        manifold.cases
    );
    let file = GradcheckFile { gradient, manifold };
    let out = prepare_out(&cfg.out)?;
    write_json(&out.join(GRADCHECK_JSON), &file)?;
    let mut failures = Vec::new();
    for c in file.gradient.failing() {
        failures.push(format!(
            "gradient seed {} ({:?}): {:.3e}",
            c.seed, c.weighting, c.relative_error
        ));
    }
    if !file.manifold.passed() {
        failures.push(format!("manifold suite seed {}", cfg.seed));
    }
    if failures.is_empty() {
        Ok(file)
    } else {
        Err(CliError::Check(failures.join("; ")))
    }
}
