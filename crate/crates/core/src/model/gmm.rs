use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnchorModel;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Diagonal-covariance Gaussian mixture used to seed the anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub max_iters: usize,
    /// Relative change in mean log-likelihood below which EM stops.
    pub tol: f64,
    /// Added to every variance.
    pub reg: f64,
    /// Responsibilities are clamped below at this value, then renormalized.
    pub weight_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            reg: 1e-6,
            weight_floor: 1e-8,
        }
    }
}

/// Fits the mixture with default settings and returns means as centers and
/// responsibilities as anchor weights.
pub fn gmm_init(data: &Dataset, k: usize, seed: u64) -> Result<AnchorModel> {
    gmm_init_with(data, k, seed, &GmmConfig::default())
}

pub fn gmm_init_with(data: &Dataset, k: usize, seed: u64, cfg: &GmmConfig) -> Result<AnchorModel> {
    let (n, d) = (data.n(), data.dim());
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Initialization(format!(
            "cannot place {k} anchors on {n} samples"
        )));
    }
    let x = data.features();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = kmeans_pp(x, k, &mut rng);
    let global_var: Vec<f64> = (0..d)
        .map(|c| {
            let col = x.column(c);
            let mu = col.mean();
            col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64 + cfg.reg
        })
        .collect();
    let mut vars = DMatrix::from_fn(k, d, |_, c| global_var[c]);
    let mut mix = vec![1.0 / k as f64; k];

    // Hard assignment to the nearest seed stands in for the first E-step.
    let mut resp = DMatrix::zeros(n, k);
    for i in 0..n {
        let nearest = (0..k)
            .map(|kk| (kk, sq_dist_to_row(x, i, &means, kk)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
            .0;
        resp[(i, nearest)] = 1.0;
    }

    let mut prev_ll = f64::NEG_INFINITY;
    let mut reseeds = 0usize;
    for iter in 0..cfg.max_iters {
        let mut reseeded = false;
        for kk in 0..k {
            let mass: f64 = resp.column(kk).sum();
            if mass < 1e-10 * n as f64 {
                reseeds += 1;
                if reseeds > 10 * k {
                    return Err(Error::Initialization(format!(
                        "mixture component {kk} keeps collapsing after {reseeds} reseeds"
                    )));
                }
                let far = farthest_point(x, &means);
                means.set_row(kk, &x.row(far));
                for c in 0..d {
                    vars[(kk, c)] = global_var[c];
                }
                mix[kk] = 1.0 / k as f64;
                reseeded = true;
                continue;
            }
            mix[kk] = mass / n as f64;
            for c in 0..d {
                let mu = resp.column(kk).dot(&x.column(c)) / mass;
                means[(kk, c)] = mu;
                let var = (0..n)
                    .map(|i| resp[(i, kk)] * (x[(i, c)] - mu).powi(2))
                    .sum::<f64>()
                    / mass;
                vars[(kk, c)] = var + cfg.reg;
            }
        }
        if reseeded {
            let s: f64 = mix.iter().sum();
            mix.iter_mut().for_each(|m| *m /= s);
            prev_ll = f64::NEG_INFINITY;
        }
        let ll = e_step(x, &means, &vars, &mix, &mut resp);
        if !ll.is_finite() {
            return Err(Error::NonFinite {
                what: "mixture log-likelihood",
                iteration: iter,
            });
        }
        if !reseeded && (ll - prev_ll).abs() < cfg.tol * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }

    for mut row in resp.row_iter_mut() {
        row.iter_mut().for_each(|w| *w = w.max(cfg.weight_floor));
        let s = row.sum();
        row /= s;
    }
    log::debug!("mixture init: K = {k}, mixing proportions {mix:?}");
    Ok(AnchorModel {
        centers: means,
        weights: resp,
    })
}

/// Fills `resp` with posterior responsibilities; returns the mean log-likelihood.
fn e_step(
    x: &DMatrix<f64>,
    means: &DMatrix<f64>,
    vars: &DMatrix<f64>,
    mix: &[f64],
    resp: &mut DMatrix<f64>,
) -> f64 {
    let (n, d) = (x.nrows(), x.ncols());
    let k = means.nrows();
    let log_norm: Vec<f64> = (0..k)
        .map(|kk| {
            let logdet: f64 = (0..d).map(|c| vars[(kk, c)].ln()).sum();
            mix[kk].max(f64::MIN_POSITIVE).ln()
                - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet)
        })
        .collect();
    let mut total = 0.0;
    let mut logs = vec![0.0; k];
    for i in 0..n {
        for kk in 0..k {
            let mut q = 0.0;
            for c in 0..d {
                q += (x[(i, c)] - means[(kk, c)]).powi(2) / vars[(kk, c)];
            }
            logs[kk] = log_norm[kk] - 0.5 * q;
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        for kk in 0..k {
            resp[(i, kk)] = (logs[kk] - top).exp() / s;
        }
        total += top + s.ln();
    }
    total / n as f64
}

fn sq_dist_to_row(x: &DMatrix<f64>, i: usize, m: &DMatrix<f64>, k: usize) -> f64 {
    (0..x.ncols())
        .map(|c| (x[(i, c)] - m[(k, c)]).powi(2))
        .sum()
}

fn nearest_sq(x: &DMatrix<f64>, i: usize, means: &DMatrix<f64>, upto: usize) -> f64 {
    (0..upto)
        .map(|k| sq_dist_to_row(x, i, means, k))
        .fold(f64::INFINITY, f64::min)
}

fn farthest_point(x: &DMatrix<f64>, means: &DMatrix<f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..x.nrows() {
        let dist = nearest_sq(x, i, means, means.nrows());
        if dist > best.1 {
            best = (i, dist);
        }
    }
    best.0
}

fn kmeans_pp(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = x.nrows();
    let mut means = DMatrix::zeros(k, x.ncols());
    let first = rng.random_range(0..n);
    means.set_row(0, &x.row(first));
    for kk in 1..k {
        let dists: Vec<f64> = (0..n).map(|i| nearest_sq(x, i, &means, kk)).collect();
        let total: f64 = dists.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, dv) in dists.iter().enumerate() {
                acc += dv;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        means.set_row(kk, &x.row(pick));
    }
    means
}
