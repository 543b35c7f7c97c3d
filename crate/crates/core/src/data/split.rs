use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub trials: usize,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            trials: 10,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        Ok(())
    }
}

/// Random stream owned by one trial: the spec seed selects the key, the trial
/// index the stream, so trials never share random numbers.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Train and test indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `0..n`, stratifying on `labels` when given. Per-class train counts
/// use largest-remainder allocation of `train_fraction · N`; a singleton class
/// always goes to train.
pub fn split_indices(
    labels: Option<&[usize]>,
    n: usize,
    train_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Split> {
    if n < 2 {
        return Err(Error::Data(format!("cannot split {n} samples")));
    }
    let groups: Vec<Vec<usize>> = match labels {
        Some(l) => {
            let classes = l.iter().max().map_or(0, |m| m + 1);
            let mut g = vec![Vec::new(); classes];
            for (i, &c) in l.iter().enumerate() {
                g[c].push(i);
            }
            g
        }
        None => vec![(0..n).collect()],
    };
    let total = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let exact: Vec<f64> = groups
        .iter()
        .map(|g| g.len() as f64 * total as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        quota[c] += 1;
    }

    let mut train = Vec::with_capacity(total);
    let mut test = Vec::with_capacity(n - total);
    for (c, members) in groups.iter().enumerate() {
        let mut members = members.clone();
        if members.len() == 1 {
            log::warn!("class {c} has a single sample; it is placed in the training set");
            train.push(members[0]);
            continue;
        }
        members.shuffle(rng);
        let q = quota[c].min(members.len());
        train.extend_from_slice(&members[..q]);
        test.extend_from_slice(&members[q..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(
            "split produced an empty train or test set".into(),
        ));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Split for one trial, drawing from `rng`.
pub fn split_with(data: &Dataset, spec: &SplitSpec, rng: &mut ChaCha8Rng) -> Result<Split> {
    spec.validate()?;
    let labels = if spec.stratified {
        Some(data.require_labels()?)
    } else {
        None
    };
    split_indices(labels, data.n(), spec.train_fraction, rng)
}

/// Train and test datasets for `trial`; reproducible per `(spec.seed, trial)`.
pub fn stratified_split(
    data: &Dataset,
    spec: &SplitSpec,
    trial: usize,
) -> Result<(Dataset, Dataset)> {
    let mut rng = trial_rng(spec.seed, trial as u64);
    let s = split_with(data, spec, &mut rng)?;
    Ok((data.subset(&s.train), data.subset(&s.test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn labelled(labels: Vec<usize>) -> Dataset {
        let n = labels.len();
        Dataset::new(DMatrix::from_fn(n, 1, |i, _| i as f64), Some(labels)).unwrap()
    }

    #[test]
    fn balanced_ten() {
        let data = labelled(vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let (train, test) = stratified_split(&data, &SplitSpec::default(), 0).unwrap();
        assert_eq!(train.n(), 7);
        assert_eq!(test.n(), 3);
        let zeros = train.labels().unwrap().iter().filter(|c| **c == 0).count();
        assert!((3..=4).contains(&zeros));
    }

    #[test]
    fn reproducible_and_trial_dependent() {
        let data = labelled((0..40).map(|i| i % 3).collect());
        let spec = SplitSpec::default();
        let mut rng = trial_rng(spec.seed, 2);
        let a = split_with(&data, &spec, &mut rng).unwrap();
        let mut rng = trial_rng(spec.seed, 2);
        let b = split_with(&data, &spec, &mut rng).unwrap();
        assert_eq!(a, b);
        let splits: Vec<Split> = (0..10)
            .map(|t| split_with(&data, &spec, &mut trial_rng(spec.seed, t)).unwrap())
            .collect();
        for i in 0..10 {
            for j in i + 1..10 {
                assert_ne!(splits[i], splits[j], "trials {i} and {j} collide");
            }
        }
    }

    #[test]
    fn singleton_class_goes_to_train() {
        let data = labelled(vec![0, 0, 0, 0, 1, 0, 0]);
        let (train, _) = stratified_split(&data, &SplitSpec::default(), 0).unwrap();
        assert!(train.labels().unwrap().contains(&1));
    }

    #[test]
    fn unstratified_needs_no_labels() {
        let data = Dataset::new(DMatrix::from_fn(20, 2, |i, j| (i * j) as f64), None).unwrap();
        let spec = SplitSpec {
            stratified: false,
            ..SplitSpec::default()
        };
        let (train, test) = stratified_split(&data, &spec, 1).unwrap();
        assert_eq!((train.n(), test.n()), (14, 6));
        assert!(stratified_split(&data, &SplitSpec::default(), 1).is_err());
    }

    #[test]
    fn spec_validation() {
        for f in [0.0, 1.0, -0.2, f64::NAN] {
            let s = SplitSpec {
                train_fraction: f,
                ..SplitSpec::default()
            };
            assert!(matches!(s.validate(), Err(Error::Config(_))));
        }
    }

    proptest! {
        #[test]
        fn partitions_and_preserves_proportions(
            labels in prop::collection::vec(0usize..4, 4..80),
            frac in 0.1f64..0.9,
            seed in 0u64..1000,
        ) {
            // Relabel to contiguous ids.
            let mut map = std::collections::BTreeMap::new();
            let labels: Vec<usize> = labels
                .iter()
                .map(|l| { let next = map.len(); *map.entry(*l).or_insert(next) })
                .collect();
            let n = labels.len();
            let s = split_indices(Some(&labels), n, frac, &mut trial_rng(seed, 0));
            if let Ok(s) = s {
                let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                let total = s.train.len() as f64;
                for c in 0..map.len() {
                    let nc = labels.iter().filter(|l| **l == c).count();
                    if nc < 2 { continue; }
                    let tc = s.train.iter().filter(|i| labels[**i] == c).count() as f64;
                    let want = nc as f64 * total / n as f64;
                    prop_assert!((tc - want).abs() <= 1.0 + 1e-9, "class {} got {} want {}", c, tc, want);
                }
            }
        }
    }
}
