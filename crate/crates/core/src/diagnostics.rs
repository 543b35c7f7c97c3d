//! Self-checks runnable outside the test harness: a finite-difference check of
//! the metric gradient and a property suite for the SPD manifold operations.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::model::{AnchorModel, MdamlParams, Problem, Triplet, TripletSet, TripletWeighting};
use crate::spd::{
    max_asymmetry, project_to_tangent, retract, transport, Mat, SpdMatrix, TangentVector,
    TransportKind,
};

/// A random problem instance with every model input filled in.
pub struct Instance {
    pub data: Dataset,
    pub trips: TripletSet,
    pub anchors: AnchorModel,
    pub metric: SpdMatrix,
    pub params: MdamlParams,
}

/// Features uniform in `[-1.5, 1.5)`, weights on the open simplex, metric
/// `B Bᵀ + ½ I`, and randomized `λ₁`, `λ₂`, `η`.
pub fn random_instance(seed: u64, n: usize, d: usize, k: usize, t: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.5..1.5));
    let data = Dataset::new(x, None).expect("finite features");
    let mut triplets = Vec::with_capacity(t);
    while triplets.len() < t {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let r = rng.random_range(0..n);
        if i != j && i != r {
            triplets.push(Triplet { i, j, r });
        }
    }
    let trips = TripletSet::new(triplets, n).expect("indices in range");
    let centers = DMatrix::from_fn(k, d, |_, _| rng.random_range(-1.0..1.0));
    let mut weights = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.05..1.0));
    for mut row in weights.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.6..0.6));
    let metric = SpdMatrix::new((&b * b.transpose()).symmetric_part() + Mat::identity(d, d) * 0.5)
        .expect("shifted Gram matrix is SPD");
    let mut params = MdamlParams::new(k, rng.random_range(0.5..5.0));
    params.eta = rng.random_range(1.5..4.0);
    params.lambda2 = rng.random_range(1e-3..0.5);
    Instance {
        data,
        trips,
        anchors: AnchorModel { centers, weights },
        metric,
        params,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub t: usize,
    pub weighting: TripletWeighting,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub cases: Vec<GradCheckCase>,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }

    pub fn failing(&self) -> impl Iterator<Item = &GradCheckCase> {
        self.cases
            .iter()
            .filter(move |c| !(c.relative_error < self.tolerance))
    }
}

/// Gradient passed to [`gradient_check`] in place of the analytic one.
pub type GradientHook<'a> =
    &'a dyn Fn(&Problem<'_>, &SpdMatrix, &AnchorModel, &MdamlParams) -> Result<Mat>;

/// Compares the analytic Euclidean gradient against central differences of
/// the objective along each symmetric basis direction, on `instances` random
/// problems with `d ≤ 5`, `N ≤ 20`, `K ≤ 3`, `T ≤ 15`. Both triplet weightings
/// are checked on every instance.
pub fn gradient_check(
    seed: u64,
    instances: usize,
    tolerance: f64,
    gradient: Option<GradientHook<'_>>,
) -> Result<GradCheckReport> {
    let h = 1e-6;
    let mut cases = Vec::new();
    for idx in 0..instances as u64 {
        let s = seed.wrapping_add(idx);
        let mut size_rng = ChaCha8Rng::seed_from_u64(s);
        let d = size_rng.random_range(1..=5);
        let n = size_rng.random_range(4..=20);
        let k = size_rng.random_range(1..=3);
        let t = size_rng.random_range(1..=15);
        let inst = random_instance(s, n, d, k, t);
        let problem = Problem::new(&inst.data, &inst.trips)?;
        for weighting in [TripletWeighting::SelfWeighted, TripletWeighting::Fixed] {
            let p = MdamlParams {
                weighting,
                ..inst.params.clone()
            };
            let g = match gradient {
                Some(hook) => hook(&problem, &inst.metric, &inst.anchors, &p)?,
                None => problem.euclidean_gradient(&inst.metric, &inst.anchors, &p)?,
            };
            let base = inst.metric.as_matrix();
            let f_at = |m: Mat| -> Result<f64> {
                problem.objective(&SpdMatrix::new(m)?, &inst.anchors, &p)
            };
            let mut fd = Mat::zeros(d, d);
            for a in 0..d {
                for b in a..d {
                    let mut e = Mat::zeros(d, d);
                    e[(a, b)] = 1.0;
                    e[(b, a)] = 1.0;
                    let diff = (f_at(base + &e * h)? - f_at(base - &e * h)?) / (2.0 * h);
                    let v = if a == b { diff } else { 0.5 * diff };
                    fd[(a, b)] = v;
                    fd[(b, a)] = v;
                }
            }
            let denom = g.norm().max(fd.norm()).max(f64::MIN_POSITIVE);
            cases.push(GradCheckCase {
                seed: s,
                n,
                d,
                k,
                t,
                weighting,
                relative_error: (&fd - &g).norm() / denom,
            });
        }
    }
    let max_relative_error = cases
        .iter()
        .map(|c| c.relative_error)
        .fold(
            0.0,
            |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) },
        );
    Ok(GradCheckReport {
        cases,
        max_relative_error,
        tolerance,
    })
}

/// Worst observed value of each manifold property over the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub cases: usize,
    /// `max |retract(W, 0) − W|` entrywise.
    pub retract_zero_error: f64,
    /// Largest asymmetry of a projected gradient.
    pub projection_asymmetry: f64,
    /// Smallest eigenvalue of any retraction output.
    pub retraction_min_eigenvalue: f64,
    /// Retraction failures (non-finite or not positive definite).
    pub retraction_failures: usize,
    /// `max |τ_{W→W}(Z) − Z|` over both transport kinds.
    pub transport_identity_error: f64,
}

impl ManifoldReport {
    pub fn passed(&self) -> bool {
        self.retract_zero_error <= 1e-12
            && self.projection_asymmetry <= 1e-10
            && self.retraction_min_eigenvalue > 0.0
            && self.retraction_failures == 0
            && self.transport_identity_error <= 1e-12
    }
}

fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Random `W = A Aᵀ + I` and tangent `Z = sym(B)` with `A`, `B` uniform in
/// `[-1, 1)` and `d ∈ {2, …, 10}`, `cases` times.
pub fn manifold_check(seed: u64, cases: usize) -> Result<ManifoldReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ManifoldReport {
        cases,
        retract_zero_error: 0.0,
        projection_asymmetry: 0.0,
        retraction_min_eigenvalue: f64::INFINITY,
        retraction_failures: 0,
        transport_identity_error: 0.0,
    };
    for _ in 0..cases {
        let d = rng.random_range(2..=10);
        let a = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let w = SpdMatrix::new((&a * a.transpose()).symmetric_part() + Mat::identity(d, d))?;
        let b = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let z = TangentVector::new(&w, b.symmetric_part())?;
        let g = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));

        let back = retract(&w, &TangentVector::zero(&w))?;
        report.retract_zero_error = report
            .retract_zero_error
            .max(max_abs(&(back.as_matrix() - w.as_matrix())));

        let proj = project_to_tangent(&w, &g)?;
        report.projection_asymmetry = report
            .projection_asymmetry
            .max(max_asymmetry(proj.as_matrix()));

        match retract(&w, &z) {
            Ok(r) => {
                report.retraction_min_eigenvalue =
                    report.retraction_min_eigenvalue.min(r.min_eigenvalue());
            }
            Err(_) => report.retraction_failures += 1,
        }

        let same = SpdMatrix::new(w.as_matrix().clone())?;
        for kind in [TransportKind::Airm, TransportKind::Reprojection] {
            for to in [&w, &same] {
                let moved = transport(&z, &w, to, kind)?;
                report.transport_identity_error = report
                    .transport_identity_error
                    .max(max_abs(&(moved.as_matrix() - z.as_matrix())));
            }
        }
    }
    Ok(report)
}
