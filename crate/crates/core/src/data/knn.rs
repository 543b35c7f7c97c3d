use nalgebra::DVector;
use rayon::prelude::*;

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::mahalanobis_sq;
use crate::spd::SpdMatrix;

/// Majority vote among the `k` nearest training points under `M`.
///
/// Equal distances are ordered by training index; tied votes go to the
/// smallest class id.
pub fn knn_predict(
    m: &SpdMatrix,
    train: &Dataset,
    query: &DVector<f64>,
    k: usize,
) -> Result<usize> {
    let labels = train.require_labels()?;
    if k < 1 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > train.n() {
        return Err(Error::Config(format!(
            "k = {k} exceeds the {} training samples",
            train.n()
        )));
    }
    let mut dist: Vec<(f64, usize)> = (0..train.n())
        .map(|i| Ok((mahalanobis_sq(m, &train.sample(i), query)?, i)))
        .collect::<Result<_>>()?;
    dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes = vec![0usize; train.num_classes()];
    for &(_, i) in &dist[..k] {
        votes[labels[i]] += 1;
    }
    let best = votes.iter().copied().max().unwrap_or(0);
    Ok(votes.iter().position(|v| *v == best).unwrap_or(0))
}

/// Predictions for every row of `test`, in row order.
pub fn knn_predict_all(
    m: &SpdMatrix,
    train: &Dataset,
    test: &Dataset,
    k: usize,
) -> Result<Vec<usize>> {
    if test.dim() != train.dim() {
        return Err(Error::Dimension(format!(
            "test has {} features, train has {}",
            test.dim(),
            train.dim()
        )));
    }
    (0..test.n())
        .into_par_iter()
        .map(|i| knn_predict(m, train, &test.sample(i), k))
        .collect()
}

/// Fraction of positions where `predictions` and `truth` agree.
pub fn accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let hits = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}
