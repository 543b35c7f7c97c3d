//! The MDaML model: anchor-weighted clustering plus a self-weighting triplet
//! loss over a Mahalanobis metric, fitted by alternating closed-form center
//! and weight updates with a Riemannian solve for the metric.

mod fit;
mod gmm;
pub mod loss;
mod objective;
mod updates;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rcgd::RcgdConfig;

pub use fit::{fit, fit_from, FitReport, Fitted, SubStepObjectives, DESCENT_SLACK};
pub use gmm::{gmm_init, gmm_init_with, GmmConfig};
pub use loss::{smooth_hinge, smooth_hinge_deriv};
pub use objective::{
    compute_f, euclidean_gradient, mahalanobis_sq, objective, MetricStep, Problem, F_FLOOR,
};
pub use updates::{update_centers, update_weight_row, update_weights};

/// A triplet `(i, j, r)`: sample `i` is more similar to `j` than to `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub i: usize,
    pub j: usize,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TripletSet {
    triplets: Vec<Triplet>,
}

impl TripletSet {
    /// Validates indices against a dataset of `n` samples.
    pub fn new(triplets: Vec<Triplet>, n: usize) -> Result<Self> {
        for (t, tr) in triplets.iter().enumerate() {
            if tr.i >= n || tr.j >= n || tr.r >= n {
                return Err(Error::Data(format!(
                    "triplet {t} ({}, {}, {}) out of range for {n} samples",
                    tr.i, tr.j, tr.r
                )));
            }
            if tr.i == tr.j || tr.i == tr.r {
                return Err(Error::Data(format!(
                    "triplet {t} repeats its anchor ({}, {}, {})",
                    tr.i, tr.j, tr.r
                )));
            }
        }
        Ok(Self { triplets })
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triplet> {
        self.triplets.iter()
    }

    pub fn as_slice(&self) -> &[Triplet] {
        &self.triplets
    }

    /// Similar pairs `(i, j)` and dissimilar pairs `(i, r)`.
    pub fn pairwise(&self) -> (IndexPairs, IndexPairs) {
        self.triplets
            .iter()
            .map(|t| ((t.i, t.j), (t.i, t.r)))
            .unzip()
    }
}

pub type IndexPairs = Vec<(usize, usize)>;

/// Locality centers (`K × d`, one per row) and per-sample simplex weights (`N × K`).
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorModel {
    pub centers: DMatrix<f64>,
    pub weights: DMatrix<f64>,
}

impl AnchorModel {
    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    /// Strict positivity and unit row sums (within `1e-10`).
    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        let k = self.k();
        if self.centers.ncols() != d || self.weights.nrows() != n || self.weights.ncols() != k {
            return Err(Error::Dimension(format!(
                "anchors: centers {}x{}, weights {}x{}, expected K x {d} and {n} x K",
                self.centers.nrows(),
                self.centers.ncols(),
                self.weights.nrows(),
                self.weights.ncols()
            )));
        }
        for (i, row) in self.weights.row_iter().enumerate() {
            if row.iter().any(|w| !(*w > 0.0)) {
                return Err(Error::Invariant(format!(
                    "weight row {i} is not strictly positive"
                )));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::Invariant(format!("weight row {i} sums to {sum}")));
            }
        }
        Ok(())
    }
}

/// How anchor weights enter the triplet term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TripletWeighting {
    /// `Σ_k w_ik^η w_jk^η` per triplet.
    #[default]
    SelfWeighted,
    /// Every `w^η` inside the triplet term frozen at 1; the clustering term is unchanged.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdamlParams {
    /// Number of anchor centers.
    pub k: usize,
    pub lambda1: f64,
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_outer_max")]
    pub outer_max: usize,
    #[serde(default = "default_outer_tol")]
    pub outer_tol: f64,
    #[serde(default)]
    pub rcgd: RcgdConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weighting: TripletWeighting,
    /// Drops the triplet term entirely (the `λ₁ = 0` limit); allows `lambda1 = 0`
    /// and an empty triplet set.
    #[serde(default)]
    pub clustering_only: bool,
}

fn default_lambda2() -> f64 {
    1e-4
}
fn default_eta() -> f64 {
    3.0
}
fn default_outer_max() -> usize {
    20
}
fn default_outer_tol() -> f64 {
    1e-4
}

impl MdamlParams {
    /// Defaults for everything except `K` and `λ₁`.
    pub fn new(k: usize, lambda1: f64) -> Self {
        Self {
            k,
            lambda1,
            lambda2: default_lambda2(),
            eta: default_eta(),
            outer_max: default_outer_max(),
            outer_tol: default_outer_tol(),
            rcgd: RcgdConfig::default(),
            seed: 0,
            weighting: TripletWeighting::SelfWeighted,
            clustering_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if !(self.eta > 1.0) || !self.eta.is_finite() {
            return bad(format!("eta must be > 1, got {}", self.eta));
        }
        if self.clustering_only {
            if !(self.lambda1 >= 0.0) {
                return bad(format!("lambda1 must be >= 0, got {}", self.lambda1));
            }
        } else if !(self.lambda1 > 0.0) || !self.lambda1.is_finite() {
            return bad(format!("lambda1 must be > 0, got {}", self.lambda1));
        }
        if !(self.lambda2 > 0.0) || !self.lambda2.is_finite() {
            return bad(format!("lambda2 must be > 0, got {}", self.lambda2));
        }
        if self.outer_max == 0 {
            return bad("outer_max must be positive".into());
        }
        if !(self.outer_tol > 0.0) {
            return bad(format!("outer_tol must be > 0, got {}", self.outer_tol));
        }
        self.rcgd.validate()
    }

    /// Weight of the triplet term, zero in clustering-only mode.
    pub(crate) fn triplet_scale(&self) -> f64 {
        if self.clustering_only {
            0.0
        } else {
            self.lambda1
        }
    }
}
