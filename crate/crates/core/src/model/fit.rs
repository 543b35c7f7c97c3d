use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::gmm::gmm_init;
use super::objective::{MetricStep, Problem};
use super::updates::{sweep_weights, update_centers};
use super::{AnchorModel, MdamlParams, TripletSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rcgd::{rcgd_minimize, RcgdTrace};
use crate::spd::SpdMatrix;

/// Absolute slack, scaled by `max(1, |f|)`, allowed on each sub-step increase.
pub const DESCENT_SLACK: f64 = 1e-9;

/// Objective after each of the three sub-updates of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubStepObjectives {
    pub after_centers: f64,
    pub after_weights: f64,
    pub after_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Entry 0 is the objective at the initial point; entry `t` follows outer iteration `t`.
    pub objective_per_outer: Vec<f64>,
    pub sub_step_objectives: Vec<SubStepObjectives>,
    pub outer_iters: usize,
    pub converged: bool,
    pub rcgd_traces: Vec<RcgdTrace>,
    /// Left out of serialized output so reports are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub metric: SpdMatrix,
    pub anchors: AnchorModel,
    pub report: FitReport,
}

fn check_descent(stage: &str, outer: usize, before: f64, after: f64) -> Result<()> {
    if !after.is_finite() {
        return Err(Error::NonFinite {
            what: "objective",
            iteration: outer,
        });
    }
    if after > before + DESCENT_SLACK * before.abs().max(1.0) {
        return Err(Error::Invariant(format!(
            "{stage} raised the objective from {before} to {after} in outer iteration {outer}"
        )));
    }
    Ok(())
}

/// Alternates center, weight and metric updates from `M = I` and a mixture
/// initialization until the relative objective decrease drops below
/// `outer_tol` or `outer_max` iterations have run.
pub fn fit(data: &Dataset, trips: &TripletSet, p: &MdamlParams) -> Result<Fitted> {
    p.validate()?;
    let anchors = gmm_init(data, p.k, p.seed)?;
    fit_from(data, trips, p, SpdMatrix::identity(data.dim()), anchors)
}

/// [`fit`] from a caller-supplied starting point.
pub fn fit_from(
    data: &Dataset,
    trips: &TripletSet,
    p: &MdamlParams,
    m0: SpdMatrix,
    mut anchors: AnchorModel,
) -> Result<Fitted> {
    let start = Instant::now();
    p.validate()?;
    if trips.is_empty() && !p.clustering_only {
        return Err(Error::Data("triplet set is empty".into()));
    }
    anchors.validate(data.n(), data.dim())?;
    let problem = Problem::new(data, trips)?;
    let mut m = m0;

    let mut f = problem.objective(&m, &anchors, p)?;
    let mut report = FitReport {
        objective_per_outer: vec![f],
        sub_step_objectives: Vec::new(),
        outer_iters: 0,
        converged: false,
        rcgd_traces: Vec::new(),
        wall_time_seconds: 0.0,
    };

    for outer in 1..=p.outer_max {
        anchors.centers = update_centers(data, &anchors.weights, p.eta)?;
        let after_centers = problem.objective(&m, &anchors, p)?;
        check_descent("center update", outer, f, after_centers)?;

        sweep_weights(&problem, &m, &mut anchors, p)?;
        anchors.validate(data.n(), data.dim())?;
        let after_weights = problem.objective(&m, &anchors, p)?;
        check_descent("weight update", outer, after_centers, after_weights)?;

        let step = MetricStep::new(&problem, &anchors, p);
        let (m_new, trace) = rcgd_minimize(&m, |x| step.cost(x), |x| step.gradient(x), &p.rcgd)?;
        m = m_new;
        let after_metric = problem.objective(&m, &anchors, p)?;
        check_descent("metric update", outer, after_weights, after_metric)?;

        log::debug!(
            "outer {outer}: objective {after_metric:.6e}, rcgd {} iters",
            trace.iters_used
        );
        report.rcgd_traces.push(trace);
        report.sub_step_objectives.push(SubStepObjectives {
            after_centers,
            after_weights,
            after_metric,
        });
        report.objective_per_outer.push(after_metric);
        report.outer_iters = outer;

        let rel = (f - after_metric) / f.abs().max(f64::MIN_POSITIVE);
        f = after_metric;
        if rel < p.outer_tol {
            report.converged = true;
            break;
        }
    }
    report.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(Fitted {
        metric: m,
        anchors,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::random_instance;
    use super::super::{objective, Triplet, TripletWeighting};
    use super::*;
    use crate::spd::Mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_monotone(report: &FitReport) {
        let mut prev = f64::INFINITY;
        for s in &report.sub_step_objectives {
            for v in [s.after_centers, s.after_weights, s.after_metric] {
                assert!(v <= prev + 1e-9 * prev.abs().max(1.0), "{v} > {prev}");
                prev = v;
            }
        }
        for w in report.objective_per_outer.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn random_instances_descend() {
        for seed in 0..6 {
            let inst = random_instance(seed, 25, 3, 3, 40);
            let mut p = inst.params.clone();
            p.lambda2 = 1e-3;
            let fit = fit(&inst.data, &inst.trips, &p).unwrap();
            assert_monotone(&fit.report);
            assert_eq!(
                fit.report.objective_per_outer.len(),
                fit.report.outer_iters + 1
            );
            assert_eq!(fit.report.rcgd_traces.len(), fit.report.outer_iters);
            fit.anchors.validate(25, 3).unwrap();
            let last = *fit.report.objective_per_outer.last().unwrap();
            let recomputed =
                objective(&fit.metric, &fit.anchors, &inst.data, &inst.trips, &p).unwrap();
            assert!((last - recomputed).abs() <= 1e-12 * last.abs().max(1.0));

            p.weighting = TripletWeighting::Fixed;
            assert_monotone(&fit_with_default_seed(&inst.data, &inst.trips, &p));
        }
    }

    fn fit_with_default_seed(data: &Dataset, trips: &TripletSet, p: &MdamlParams) -> FitReport {
        fit(data, trips, p).unwrap().report
    }

    #[test]
    fn deterministic() {
        let inst = random_instance(3, 20, 2, 2, 30);
        let a = fit(&inst.data, &inst.trips, &inst.params).unwrap();
        let b = fit(&inst.data, &inst.trips, &inst.params).unwrap();
        assert_eq!(a.metric, b.metric);
        assert_eq!(a.anchors, b.anchors);
        assert_eq!(a.report.objective_per_outer, b.report.objective_per_outer);
    }

    #[test]
    fn single_cluster_far_triplets_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 30;
        let x = Mat::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let mut x = x;
        // Push the last sample far away so every dissimilar pair sits in the dead zone.
        x[(n - 1, 0)] = 40.0;
        let data = Dataset::new(x, None).unwrap();
        let trips: Vec<Triplet> = (0..n - 2)
            .map(|i| Triplet {
                i,
                j: i + 1,
                r: n - 1,
            })
            .collect();
        let trips = TripletSet::new(trips, n).unwrap();
        let fitted = fit(&data, &trips, &MdamlParams::new(1, 1.0)).unwrap();
        assert_monotone(&fitted.report);
    }

    #[test]
    fn clustering_only_matches_fuzzy_clustering_oracle() {
        let inst = random_instance(11, 30, 2, 3, 5);
        let p = MdamlParams {
            clustering_only: true,
            lambda1: 0.0,
            ..MdamlParams::new(3, 0.0)
        };
        let empty = TripletSet::default();
        let fitted = fit(&inst.data, &empty, &p).unwrap();
        assert_monotone(&fitted.report);

        // Metric-weighted fuzzy clustering plus ridge, summed directly.
        let x = inst.data.features();
        let m = fitted.metric.as_matrix();
        let (n, k) = (30usize, 3usize);
        let mut want = 0.0;
        for i in 0..n {
            for kk in 0..k {
                let v = x.row(i) - fitted.anchors.centers.row(kk);
                let q = (&v * m * v.transpose())[(0, 0)];
                want += fitted.anchors.weights[(i, kk)].powf(p.eta) * q;
            }
        }
        want = want / (n * k) as f64 + 0.5 * p.lambda2 * m.norm_squared();
        let got = *fitted.report.objective_per_outer.last().unwrap();
        assert!(
            (got - want).abs() <= 1e-12 * want.abs().max(1.0),
            "{got} vs {want}"
        );

        // With no triplets the metric gradient is S/(NK) + λ₂M, so the stationary
        // point has no positive-definite solution and M shrinks toward zero.
        assert!(fitted.metric.max_eigenvalue() < 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let inst = random_instance(2, 8, 2, 2, 4);
        let empty = TripletSet::default();
        assert!(matches!(
            fit(&inst.data, &empty, &inst.params),
            Err(Error::Data(_))
        ));
        let p = MdamlParams {
            eta: 1.0,
            ..inst.params.clone()
        };
        assert!(matches!(
            fit(&inst.data, &inst.trips, &p),
            Err(Error::Config(_))
        ));
        let p = MdamlParams::new(9, 1.0);
        assert!(matches!(
            fit(&inst.data, &inst.trips, &p),
            Err(Error::Initialization(_))
        ));
    }

    #[test]
    fn report_serialization_skips_wall_time() {
        let inst = random_instance(4, 10, 2, 2, 8);
        let fitted = fit(&inst.data, &inst.trips, &inst.params).unwrap();
        let json = serde_json::to_string(&fitted.report).unwrap();
        assert!(!json.contains("wall_time"));
        assert!(json.contains("objective_per_outer"));
    }
}
