use nalgebra::DVector;

use super::objective::Problem;
use super::{AnchorModel, MdamlParams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::spd::{Mat, SpdMatrix};

/// Centers as `w^η`-weighted means of the samples, one row per anchor.
///
/// The minimizer does not depend on the metric, since every `d_M(x_i, ·)` is
/// a quadratic with the same Hessian `2M`.
pub fn update_centers(data: &Dataset, weights: &Mat, eta: f64) -> Result<Mat> {
    let (n, d) = (data.n(), data.dim());
    if weights.nrows() != n {
        return Err(Error::Dimension(format!(
            "weights have {} rows for {n} samples",
            weights.nrows()
        )));
    }
    let k = weights.ncols();
    let wp = weights.map(|w| w.powf(eta));
    let mut centers = wp.transpose() * data.features();
    for kk in 0..k {
        let mass = wp.column(kk).sum();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::NonFinite {
                what: "center weight mass",
                iteration: kk,
            });
        }
        for c in 0..d {
            centers[(kk, c)] /= mass;
        }
    }
    Ok(centers)
}

/// Row-wise [`update_weight_row`] over an `N × K` cost matrix.
pub fn update_weights(f: &Mat, eta: f64) -> Result<Mat> {
    let mut w = Mat::zeros(f.nrows(), f.ncols());
    for (i, row) in f.row_iter().enumerate() {
        let r = update_weight_row(&row.transpose(), eta).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, iteration: i },
            other => other,
        })?;
        w.set_row(i, &r.transpose());
    }
    Ok(w)
}

/// Minimizer of `Σ_k w_k^η F_k` over the probability simplex:
/// `w_k ∝ F_k^{-1/(η−1)}`, evaluated in log space.
pub fn update_weight_row(f: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    if !(eta > 1.0) || !eta.is_finite() {
        return Err(Error::Precondition(format!("eta must be > 1, got {eta}")));
    }
    if f.is_empty() {
        return Err(Error::Dimension("empty cost row".into()));
    }
    if f.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::NonFinite {
            what: "weight-update cost",
            iteration: 0,
        });
    }
    let inv = 1.0 / (eta - 1.0);
    let logs = f.map(|v| -v.ln() * inv);
    let top = logs.max();
    let mut w = logs.map(|l| (l - top).exp().max(f64::MIN_POSITIVE));
    let s = w.sum();
    w /= s;
    Ok(w)
}

/// One Gauss–Seidel pass over the weight rows in ascending sample order.
/// Each row sees the rows already refreshed in this pass.
pub(crate) fn sweep_weights(
    problem: &Problem<'_>,
    m: &SpdMatrix,
    anchors: &mut AnchorModel,
    p: &MdamlParams,
) -> Result<()> {
    let losses = problem.deltas(m).map(super::loss::smooth_hinge);
    for i in 0..problem.data().n() {
        let f = problem.f_row(m, anchors, i, p, &losses);
        let w = update_weight_row(&f, p.eta).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, iteration: i },
            other => other,
        })?;
        anchors.weights.set_row(i, &w.transpose());
    }
    Ok(())
}
