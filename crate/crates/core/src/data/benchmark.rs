use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::{accuracy, knn_predict_all};
use super::split::{split_with, trial_rng, SplitSpec};
use super::triplets::{generate_triplets, TripletSpec};
use super::{Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::model::{fit, MdamlParams, TripletWeighting};
use crate::spd::SpdMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MDaML")]
    Mdaml,
    #[serde(rename = "EUCLID")]
    Euclid,
    #[serde(rename = "Fixed-weight")]
    FixedWeight,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mdaml => "MDaML",
            Method::Euclid => "EUCLID",
            Method::FixedWeight => "Fixed-weight",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid searched on trial 0 only; the winner is frozen for every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningGrid {
    pub k: Vec<usize>,
    pub lambda1: Vec<f64>,
    /// Fraction of trial 0's training set used to fit; the rest scores the grid.
    pub inner_train_fraction: f64,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            k: vec![2, 4, 6, 8, 10, 15, 20, 25, 30, 40, 50],
            lambda1: vec![0.1, 1.0, 10.0, 100.0, 1000.0],
            inner_train_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub split: SplitSpec,
    pub triplets: TripletSpec,
    pub params: MdamlParams,
    pub knn_k: usize,
    /// Adds the fixed-weight ablation as a third method.
    pub ablation: bool,
    pub tuning: Option<TuningGrid>,
}

impl BenchmarkConfig {
    pub fn new(params: MdamlParams) -> Self {
        Self {
            split: SplitSpec::default(),
            triplets: TripletSpec::default(),
            params,
            knn_k: 3,
            ablation: false,
            tuning: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.params.validate()?;
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be at least 1".into()));
        }
        if let Some(g) = &self.tuning {
            if g.k.is_empty() || g.lambda1.is_empty() {
                return Err(Error::Config("tuning grids must be nonempty".into()));
            }
            if !(g.inner_train_fraction > 0.0 && g.inner_train_fraction < 1.0) {
                return Err(Error::Config(
                    "inner_train_fraction must lie in (0, 1)".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m = vec![Method::Mdaml, Method::Euclid];
        if self.ablation {
            m.push(Method::FixedWeight);
        }
        m
    }
}

/// One method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: Method,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_triplets: usize,
    /// Empty for EUCLID.
    pub objective_per_outer: Vec<f64>,
    pub outer_iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean: f64,
    /// Sample standard deviation over trials; 0 for a single trial.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub accuracies: Vec<f64>,
}

impl MethodSummary {
    pub fn from_accuracies(method: Method, accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = if accuracies.len() > 1 {
            (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = accuracies.iter().copied().fold(f64::INFINITY, f64::min);
        let max = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            method,
            mean,
            std,
            min,
            max,
            accuracies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub k: usize,
    pub lambda1: f64,
    /// `None` when the fit failed or `K` exceeded the inner training set.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    pub k: usize,
    pub lambda1: f64,
    pub scores: Vec<GridScore>,
}

/// Wall-clock seconds, kept out of the reproducible report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub trial: usize,
    pub method: Method,
    pub fit_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Parameters actually used for every trial, after tuning.
    pub params: MdamlParams,
    pub tuning: Option<TuningOutcome>,
    pub summaries: Vec<MethodSummary>,
    pub trials: Vec<TrialRecord>,
    #[serde(skip)]
    pub timing: Vec<TrialTiming>,
}

impl BenchmarkReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

struct TrialData {
    train: Dataset,
    test: Dataset,
    triplet_seed: u64,
    gmm_seed: u64,
}

fn prepare_trial(data: &Dataset, split: &SplitSpec, rng: &mut ChaCha8Rng) -> Result<TrialData> {
    let s = split_with(data, split, rng)?;
    let raw_train = data.subset(&s.train);
    let raw_test = data.subset(&s.test);
    let norm = Normalizer::fit(&raw_train)?;
    Ok(TrialData {
        train: norm.apply(&raw_train)?,
        test: norm.apply(&raw_test)?,
        triplet_seed: rng.random(),
        gmm_seed: rng.random(),
    })
}

fn score(
    train: &Dataset,
    test: &Dataset,
    triplet_spec: &TripletSpec,
    triplet_seed: u64,
    params: &MdamlParams,
    knn_k: usize,
) -> Result<f64> {
    let trips = generate_triplets(train, triplet_spec, triplet_seed)?;
    let fitted = fit(train, &trips, params)?;
    let pred = knn_predict_all(&fitted.metric, train, test, knn_k)?;
    accuracy(&pred, test.require_labels()?)
}

/// Grid search on an inner split of trial 0's normalized training data.
fn tune(data: &Dataset, cfg: &BenchmarkConfig, grid: &TuningGrid) -> Result<TuningOutcome> {
    let mut rng = trial_rng(cfg.split.seed, 0);
    let outer = prepare_trial(data, &cfg.split, &mut rng)?;
    let inner_spec = SplitSpec {
        train_fraction: grid.inner_train_fraction,
        ..cfg.split.clone()
    };
    let mut inner_rng = trial_rng(cfg.split.seed, u64::MAX);
    let s = split_with(&outer.train, &inner_spec, &mut inner_rng)?;
    let inner_train = outer.train.subset(&s.train);
    let inner_val = outer.train.subset(&s.test);

    let combos: Vec<(usize, f64)> = grid
        .k
        .iter()
        .flat_map(|&k| grid.lambda1.iter().map(move |&l| (k, l)))
        .collect();
    let scores: Vec<GridScore> = combos
        .par_iter()
        .map(|&(k, lambda1)| {
            let params = MdamlParams {
                k,
                lambda1,
                seed: outer.gmm_seed,
                ..cfg.params.clone()
            };
            let accuracy = if k > inner_train.n() {
                None
            } else {
                match score(
                    &inner_train,
                    &inner_val,
                    &cfg.triplets,
                    outer.triplet_seed,
                    &params,
                    cfg.knn_k,
                ) {
                    Ok(a) => Some(a),
                    Err(e) => {
                        log::warn!("tuning K = {k}, lambda1 = {lambda1} failed: {e}");
                        None
                    }
                }
            };
            GridScore {
                k,
                lambda1,
                accuracy,
            }
        })
        .collect();
    let best = scores
        .iter()
        .filter_map(|s| s.accuracy.map(|a| (a, s)))
        .fold(None::<(f64, &GridScore)>, |best, (a, s)| match best {
            Some((b, _)) if b >= a => best,
            _ => Some((a, s)),
        })
        .ok_or_else(|| Error::Data("every tuning configuration failed".into()))?
        .1;
    Ok(TuningOutcome {
        k: best.k,
        lambda1: best.lambda1,
        scores: scores.clone(),
    })
}

fn run_trial(
    data: &Dataset,
    cfg: &BenchmarkConfig,
    params: &MdamlParams,
    trial: usize,
) -> Result<(Vec<TrialRecord>, Vec<TrialTiming>)> {
    let mut rng = trial_rng(cfg.split.seed, trial as u64);
    let td = prepare_trial(data, &cfg.split, &mut rng)?;
    let truth = td.test.require_labels()?;
    let trips = generate_triplets(&td.train, &cfg.triplets, td.triplet_seed)?;
    let mut records = Vec::new();
    let mut timing = Vec::new();
    for method in cfg.methods() {
        let t0 = Instant::now();
        let (metric, report) = match method {
            Method::Euclid => (SpdMatrix::identity(td.train.dim()), None),
            Method::Mdaml | Method::FixedWeight => {
                let p = MdamlParams {
                    seed: td.gmm_seed,
                    weighting: if method == Method::FixedWeight {
                        TripletWeighting::Fixed
                    } else {
                        params.weighting
                    },
                    ..params.clone()
                };
                let fitted = fit(&td.train, &trips, &p)?;
                (fitted.metric, Some(fitted.report))
            }
        };
        let fit_seconds = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let pred = knn_predict_all(&metric, &td.train, &td.test, cfg.knn_k)?;
        let acc = accuracy(&pred, truth)?;
        timing.push(TrialTiming {
            trial,
            method,
            fit_seconds,
            eval_seconds: t1.elapsed().as_secs_f64(),
        });
        records.push(TrialRecord {
            trial,
            method,
            accuracy: acc,
            n_train: td.train.n(),
            n_test: td.test.n(),
            n_triplets: trips.len(),
            objective_per_outer: report
                .as_ref()
                .map(|r| r.objective_per_outer.clone())
                .unwrap_or_default(),
            outer_iters: report.as_ref().map_or(0, |r| r.outer_iters),
            converged: report.as_ref().is_none_or(|r| r.converged),
        });
    }
    Ok((records, timing))
}

/// Runs every trial (in parallel on the current rayon pool) and summarizes
/// accuracy per method. Results do not depend on the pool size.
pub fn run_benchmark(data: &Dataset, cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    data.require_labels()?;
    let tuning = match &cfg.tuning {
        Some(grid) => Some(tune(data, cfg, grid).map_err(|e| Error::Trial {
            trial: 0,
            source: Box::new(e),
        })?),
        None => None,
    };
    let params = match &tuning {
        Some(t) => MdamlParams {
            k: t.k,
            lambda1: t.lambda1,
            ..cfg.params.clone()
        },
        None => cfg.params.clone(),
    };
    let per_trial: Vec<(Vec<TrialRecord>, Vec<TrialTiming>)> = (0..cfg.split.trials)
        .into_par_iter()
        .map(|t| {
            run_trial(data, cfg, &params, t).map_err(|e| Error::Trial {
                trial: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut trials = Vec::new();
    let mut timing = Vec::new();
    for (r, t) in per_trial {
        trials.extend(r);
        timing.extend(t);
    }
    let summaries = cfg
        .methods()
        .into_iter()
        .map(|m| {
            let acc = trials
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.accuracy)
                .collect();
            MethodSummary::from_accuracies(m, acc)
        })
        .collect();
    Ok(BenchmarkReport {
        params,
        tuning,
        summaries,
        trials,
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{multimodal_xor, MultimodalSpec};

    fn small_cfg() -> BenchmarkConfig {
        let mut params = MdamlParams::new(4, 1.0);
        params.outer_max = 5;
        let mut cfg = BenchmarkConfig::new(params);
        cfg.split.trials = 3;
        cfg
    }

    fn small_data() -> Dataset {
        multimodal_xor(
            &MultimodalSpec {
                n: 80,
                noise_dims: 2,
                ..MultimodalSpec::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn summaries_bound_their_trials() {
        let mut cfg = small_cfg();
        cfg.ablation = true;
        let report = run_benchmark(&small_data(), &cfg).unwrap();
        assert_eq!(report.trials.len(), 9);
        for s in &report.summaries {
            assert_eq!(s.accuracies.len(), 3);
            assert!(s.min <= s.mean && s.mean <= s.max);
        }
        for r in report.trials.iter().filter(|r| r.method == Method::Euclid) {
            assert!(r.objective_per_outer.is_empty());
        }
        for r in report.trials.iter().filter(|r| r.method != Method::Euclid) {
            for w in r.objective_per_outer.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
        }
    }

    #[test]
    fn independent_of_thread_count() {
        let cfg = small_cfg();
        let data = small_data();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_benchmark(&data, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.trials, b.trials);
        assert_eq!(a.summaries, b.summaries);
    }

    #[test]
    fn tuning_picks_a_grid_point() {
        let mut cfg = small_cfg();
        cfg.split.trials = 1;
        cfg.tuning = Some(TuningGrid {
            k: vec![2, 4],
            lambda1: vec![0.1, 10.0],
            inner_train_fraction: 0.7,
        });
        let report = run_benchmark(&small_data(), &cfg).unwrap();
        let t = report.tuning.as_ref().unwrap();
        assert_eq!(t.scores.len(), 4);
        assert_eq!((report.params.k, report.params.lambda1), (t.k, t.lambda1));
        let best = t
            .scores
            .iter()
            .filter_map(|s| s.accuracy)
            .fold(0.0, f64::max);
        let chosen = t
            .scores
            .iter()
            .find(|s| s.k == t.k && s.lambda1 == t.lambda1)
            .unwrap();
        assert_eq!(chosen.accuracy, Some(best));
    }

    #[test]
    fn errors_carry_trial_index() {
        let mut cfg = small_cfg();
        cfg.params.k = 500;
        let err = run_benchmark(&small_data(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Trial { .. }), "{err:?}");
        assert!(matches!(err.root(), Error::Initialization(_)));
    }

    #[test]
    fn std_is_sample_std() {
        let s = MethodSummary::from_accuracies(Method::Euclid, vec![0.5, 0.7, 0.9]);
        assert!((s.mean - 0.7).abs() < 1e-15);
        assert!((s.std - 0.2).abs() < 1e-12);
        assert_eq!(
            MethodSummary::from_accuracies(Method::Euclid, vec![0.4]).std,
            0.0
        );
    }
}
