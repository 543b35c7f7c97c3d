use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::{Triplet, TripletSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletSpec {
    pub per_anchor_similar: usize,
    pub per_anchor_dissimilar: usize,
    /// Every similar partner with every dissimilar partner, instead of m-th with m-th.
    pub cross_product: bool,
}

impl Default for TripletSpec {
    fn default() -> Self {
        Self {
            per_anchor_similar: 10,
            per_anchor_dissimilar: 10,
            cross_product: false,
        }
    }
}

/// Draws same-class and different-class partners for every anchor without
/// replacement, in ascending anchor order.
pub fn generate_triplets(train: &Dataset, spec: &TripletSpec, seed: u64) -> Result<TripletSet> {
    if spec.per_anchor_similar == 0 || spec.per_anchor_dissimilar == 0 {
        return Err(Error::Config(
            "triplet partner counts must be positive".into(),
        ));
    }
    let labels = train.require_labels()?;
    let n = labels.len();
    let classes = train.num_classes();
    let mut members = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for i in 0..n {
        let c = labels[i];
        let same: Vec<usize> = members[c].iter().copied().filter(|&j| j != i).collect();
        let other: Vec<usize> = (0..n).filter(|&r| labels[r] != c).collect();
        if same.is_empty() || other.is_empty() {
            skipped += 1;
            continue;
        }
        let js: Vec<usize> = sample(
            &mut rng,
            same.len(),
            spec.per_anchor_similar.min(same.len()),
        )
        .into_iter()
        .map(|a| same[a])
        .collect();
        let rs: Vec<usize> = sample(
            &mut rng,
            other.len(),
            spec.per_anchor_dissimilar.min(other.len()),
        )
        .into_iter()
        .map(|a| other[a])
        .collect();
        if spec.cross_product {
            for &j in &js {
                for &r in &rs {
                    out.push(Triplet { i, j, r });
                }
            }
        } else {
            out.extend(js.iter().zip(&rs).map(|(&j, &r)| Triplet { i, j, r }));
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} anchors skipped: no same-class or no different-class partner");
    }
    if out.is_empty() {
        return Err(Error::Data(
            "no triplets could be formed from the labels".into(),
        ));
    }
    TripletSet::new(out, n)
}
