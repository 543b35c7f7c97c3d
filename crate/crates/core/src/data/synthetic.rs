use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Two classes, each made of two Gaussian modes placed on the diagonals of a
/// square in the first two coordinates (an XOR layout), padded with isotropic
/// noise coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultimodalSpec {
    pub n: usize,
    pub noise_dims: usize,
    /// Half the side of the square holding the mode means.
    pub separation: f64,
    pub mode_std: f64,
    pub noise_std: f64,
}

impl Default for MultimodalSpec {
    fn default() -> Self {
        Self {
            n: 400,
            noise_dims: 8,
            separation: 3.0,
            mode_std: 1.0,
            noise_std: 1.0,
        }
    }
}

/// Samples cycle through the modes `(-s,-s)`, `(s,s)` for class 0 and
/// `(-s,s)`, `(s,-s)` for class 1, so each mode holds `n / 4` points.
pub fn multimodal_xor(spec: &MultimodalSpec, seed: u64) -> Result<Dataset> {
    if spec.n < 4 {
        return Err(Error::Config(
            "need at least 4 samples, one per mode".into(),
        ));
    }
    let mode =
        Normal::new(0.0, spec.mode_std).map_err(|e| Error::Config(format!("mode_std: {e}")))?;
    let noise =
        Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(format!("noise_std: {e}")))?;
    let s = spec.separation;
    let means = [(-s, -s, 0), (s, s, 0), (-s, s, 1), (s, -s, 1)];
    let d = 2 + spec.noise_dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(spec.n, d);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let (mx, my, class) = means[i % 4];
        x[(i, 0)] = mx + mode.sample(&mut rng);
        x[(i, 1)] = my + mode.sample(&mut rng);
        for c in 2..d {
            x[(i, c)] = noise.sample(&mut rng);
        }
        labels.push(class);
    }
    Dataset::new(x, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_balance() {
        let data = multimodal_xor(&MultimodalSpec::default(), 1).unwrap();
        assert_eq!((data.n(), data.dim()), (400, 10));
        let ones = data.labels().unwrap().iter().filter(|c| **c == 1).count();
        assert_eq!(ones, 200);
        assert_eq!(data, multimodal_xor(&MultimodalSpec::default(), 1).unwrap());
    }

    #[test]
    fn class_means_coincide() {
        // Both classes are centered at the origin, so no linear projection separates them.
        let data = multimodal_xor(&MultimodalSpec::default(), 2).unwrap();
        let labels = data.labels().unwrap();
        for class in 0..2 {
            let rows: Vec<usize> = (0..400).filter(|i| labels[*i] == class).collect();
            let sub = data.subset(&rows);
            let mean = sub.features().row_mean();
            assert!(mean[0].abs() < 0.5 && mean[1].abs() < 0.5, "{mean}");
        }
    }
}
