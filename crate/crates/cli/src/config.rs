use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mdaml_core::data::{BenchmarkConfig, LabelColumn, SplitSpec, TripletSpec, TuningGrid};
use mdaml_core::model::{MdamlParams, TripletWeighting};
use mdaml_core::rcgd::RcgdConfig;
use mdaml_core::{Error, Result};

/// Hyper-parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    K,
    Lambda1,
    Lambda2,
    Eta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "k",
            SweepParam::Lambda1 => "lambda1",
            SweepParam::Lambda2 => "lambda2",
            SweepParam::Eta => "eta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub tolerance: f64,
    pub manifold_cases: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            tolerance: 1e-5,
            manifold_cases: 100,
        }
    }
}

/// Everything a command needs. Loaded from JSON, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub label: Option<LabelColumn>,
    pub header: bool,
    pub out: PathBuf,
    pub workers: Option<usize>,

    pub k: Option<usize>,
    pub lambda1: Option<f64>,
    pub lambda2: f64,
    pub eta: f64,
    pub outer_max: usize,
    pub outer_tol: f64,
    pub rcgd: RcgdConfig,
    pub seed: u64,
    pub fixed_weights: bool,

    pub split: SplitSpec,
    pub triplets: TripletSpec,
    pub knn_k: usize,
    pub tuning: Option<TuningGrid>,
    pub sweep: Option<SweepConfig>,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = MdamlParams::new(1, 1.0);
        Self {
            data: None,
            label: None,
            header: true,
            out: PathBuf::from("mdaml-out"),
            workers: None,
            k: None,
            lambda1: None,
            lambda2: p.lambda2,
            eta: p.eta,
            outer_max: p.outer_max,
            outer_tol: p.outer_tol,
            rcgd: p.rcgd,
            seed: 0,
            fixed_weights: false,
            split: SplitSpec::default(),
            triplets: TripletSpec::default(),
            knn_k: 3,
            tuning: None,
            sweep: None,
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub label: Option<LabelColumn>,
    pub no_header: bool,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub k: Option<usize>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub eta: Option<f64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub fixed_weights: bool,
    pub cross_product_triplets: bool,
    pub tune: bool,
    pub sweep_param: Option<SweepParam>,
    pub sweep_values: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(v) = o.data {
            self.data = Some(v);
        }
        if let Some(v) = o.label {
            self.label = Some(v);
        }
        if o.no_header {
            self.header = false;
        }
        if let Some(v) = o.out {
            self.out = v;
        }
        if let Some(v) = o.workers {
            self.workers = Some(v);
        }
        if let Some(v) = o.k {
            self.k = Some(v);
        }
        if let Some(v) = o.lambda1 {
            self.lambda1 = Some(v);
        }
        if let Some(v) = o.lambda2 {
            self.lambda2 = v;
        }
        if let Some(v) = o.eta {
            self.eta = v;
        }
        if let Some(v) = o.trials {
            self.split.trials = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
            self.split.seed = v;
        }
        if o.fixed_weights {
            self.fixed_weights = true;
        }
        if o.cross_product_triplets {
            self.triplets.cross_product = true;
        }
        if o.tune && self.tuning.is_none() {
            self.tuning = Some(TuningGrid::default());
        }
        if o.sweep_param.is_some() || o.sweep_values.is_some() {
            let current = self.sweep.take();
            let parameter = o
                .sweep_param
                .or(current.as_ref().map(|s| s.parameter))
                .unwrap_or(SweepParam::K);
            let values = o
                .sweep_values
                .or(current.map(|s| s.values))
                .unwrap_or_default();
            self.sweep = Some(SweepConfig { parameter, values });
        }
    }

    /// Model parameters; `K` and `λ₁` must be set unless `allow_placeholder`
    /// (used when tuning will replace them).
    pub fn params(&self, allow_placeholder: bool) -> Result<MdamlParams> {
        let missing =
            |what: &str| Error::Config(format!("{what} must be given (--{what} or config)"));
        let (k, lambda1) = match (self.k, self.lambda1) {
            (Some(k), Some(l)) => (k, l),
            (k, l) if allow_placeholder => (k.unwrap_or(2), l.unwrap_or(1.0)),
            (None, _) => return Err(missing("k")),
            (_, None) => return Err(missing("lambda1")),
        };
        let p = MdamlParams {
            k,
            lambda1,
            lambda2: self.lambda2,
            eta: self.eta,
            outer_max: self.outer_max,
            outer_tol: self.outer_tol,
            rcgd: self.rcgd.clone(),
            seed: self.seed,
            weighting: if self.fixed_weights {
                TripletWeighting::Fixed
            } else {
                TripletWeighting::SelfWeighted
            },
            clustering_only: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// Benchmark settings. In a benchmark `fixed_weights` adds the fixed-weight
    /// ablation next to MDaML rather than replacing it.
    pub fn benchmark(&self) -> Result<BenchmarkConfig> {
        let mut params = self.params(self.tuning.is_some())?;
        params.weighting = TripletWeighting::SelfWeighted;
        let cfg = BenchmarkConfig {
            split: self.split.clone(),
            triplets: self.triplets.clone(),
            params,
            knn_k: self.knn_k,
            ablation: self.fixed_weights,
            tuning: self.tuning.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given (--data or config)".into()))
    }

    pub fn validate_common(&self) -> Result<()> {
        self.split.validate()?;
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be at least 1".into()));
        }
        Ok(())
    }
}
