use nalgebra::DVector;

use super::loss::{smooth_hinge, smooth_hinge_deriv};
use super::{AnchorModel, MdamlParams, TripletSet, TripletWeighting};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::spd::{Mat, SpdMatrix};

/// Lower bound applied to every `F_ik` before the weight update.
pub const F_FLOOR: f64 = 1e-12;

/// `(x − y)ᵀ M (x − y)`.
pub fn mahalanobis_sq(m: &SpdMatrix, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if x.len() != m.dim() || y.len() != m.dim() {
        return Err(Error::Dimension(format!(
            "vectors of length {} and {} for a {}-dimensional metric",
            x.len(),
            y.len(),
            m.dim()
        )));
    }
    let diff = x - y;
    Ok(quad_form(m.as_matrix(), &diff))
}

#[inline]
pub(crate) fn quad_form(m: &Mat, v: &DVector<f64>) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for c in 0..n {
        let vc = v[c];
        if vc == 0.0 {
            continue;
        }
        let mut col = 0.0;
        for r in 0..n {
            col += m[(r, c)] * v[r];
        }
        acc += col * vc;
    }
    acc
}

/// A dataset paired with its triplets, with the triplet difference vectors
/// and per-sample incidence lists precomputed.
pub struct Problem<'a> {
    data: &'a Dataset,
    trips: &'a TripletSet,
    /// Columns `x_i − x_j`, one per triplet.
    diff_similar: Mat,
    /// Columns `x_i − x_r`, one per triplet.
    diff_dissimilar: Mat,
    /// Triplets in which each sample is the first element.
    as_first: Vec<Vec<usize>>,
    /// Triplets in which each sample is the second element.
    as_second: Vec<Vec<usize>>,
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a Dataset, trips: &'a TripletSet) -> Result<Self> {
        let n = data.n();
        let d = data.dim();
        let t = trips.len();
        let x = data.features();
        let mut diff_similar = Mat::zeros(d, t);
        let mut diff_dissimilar = Mat::zeros(d, t);
        let mut as_first = vec![Vec::new(); n];
        let mut as_second = vec![Vec::new(); n];
        for (idx, tr) in trips.iter().enumerate() {
            if tr.i >= n || tr.j >= n || tr.r >= n {
                return Err(Error::Data(format!(
                    "triplet {idx} references a sample outside 0..{n}"
                )));
            }
            for c in 0..d {
                diff_similar[(c, idx)] = x[(tr.i, c)] - x[(tr.j, c)];
                diff_dissimilar[(c, idx)] = x[(tr.i, c)] - x[(tr.r, c)];
            }
            as_first[tr.i].push(idx);
            as_second[tr.j].push(idx);
        }
        Ok(Self {
            data,
            trips,
            diff_similar,
            diff_dissimilar,
            as_first,
            as_second,
        })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn triplets(&self) -> &TripletSet {
        self.trips
    }

    fn check(&self, m: &SpdMatrix, anchors: &AnchorModel, p: &MdamlParams) -> Result<()> {
        let (n, d) = (self.data.n(), self.data.dim());
        if m.dim() != d {
            return Err(Error::Dimension(format!(
                "metric is {}x{}, data has {d} features",
                m.dim(),
                m.dim()
            )));
        }
        if anchors.k() != p.k {
            return Err(Error::Dimension(format!(
                "anchors have K = {}, params K = {}",
                anchors.k(),
                p.k
            )));
        }
        if anchors.centers.ncols() != d
            || anchors.weights.nrows() != n
            || anchors.weights.ncols() != p.k
        {
            return Err(Error::Dimension(
                "anchor model does not match the data".into(),
            ));
        }
        if self.trips.is_empty() && !p.clustering_only {
            return Err(Error::Data("triplet set is empty".into()));
        }
        Ok(())
    }

    /// `δ_t = d_M(x_i, x_r) − d_M(x_i, x_j)` for every triplet.
    pub fn deltas(&self, m: &SpdMatrix) -> DVector<f64> {
        let mm = m.as_matrix();
        let md = mm * &self.diff_dissimilar;
        let ms = mm * &self.diff_similar;
        DVector::from_fn(self.trips.len(), |t, _| {
            self.diff_dissimilar.column(t).dot(&md.column(t))
                - self.diff_similar.column(t).dot(&ms.column(t))
        })
    }

    /// Per-triplet anchor weight `Σ_k w_{i,k}^η w_{j,k}^η` (or `K` when fixed).
    pub fn triplet_weights(&self, anchors: &AnchorModel, p: &MdamlParams) -> DVector<f64> {
        let k = anchors.k();
        match p.weighting {
            TripletWeighting::Fixed => DVector::from_element(self.trips.len(), k as f64),
            TripletWeighting::SelfWeighted => {
                let wp = anchors.weights.map(|w| w.powf(p.eta));
                DVector::from_iterator(
                    self.trips.len(),
                    self.trips.iter().map(|tr| wp.row(tr.i).dot(&wp.row(tr.j))),
                )
            }
        }
    }

    /// Weighted scatter `Σ_i Σ_k w_ik^η (x_i − c_k)(x_i − c_k)ᵀ`.
    pub fn scatter(&self, anchors: &AnchorModel, eta: f64) -> Mat {
        let (n, d) = (self.data.n(), self.data.dim());
        let x = self.data.features();
        let mut s = Mat::zeros(d, d);
        let mut diff = DVector::zeros(d);
        for i in 0..n {
            for k in 0..anchors.k() {
                let w = anchors.weights[(i, k)].powf(eta);
                for c in 0..d {
                    diff[c] = x[(i, c)] - anchors.centers[(k, c)];
                }
                s.ger(w, &diff, &diff, 1.0);
            }
        }
        s
    }

    /// Full objective, summed term by term from the definition.
    pub fn objective(&self, m: &SpdMatrix, anchors: &AnchorModel, p: &MdamlParams) -> Result<f64> {
        self.check(m, anchors, p)?;
        let (n, d) = (self.data.n(), self.data.dim());
        let k = anchors.k();
        let x = self.data.features();
        let mm = m.as_matrix();

        let mut clustering = 0.0;
        let mut diff = DVector::zeros(d);
        for i in 0..n {
            for kk in 0..k {
                for c in 0..d {
                    diff[c] = x[(i, c)] - anchors.centers[(kk, c)];
                }
                clustering += anchors.weights[(i, kk)].powf(p.eta) * quad_form(mm, &diff);
            }
        }
        clustering /= (n * k) as f64;

        let triplet = self.triplet_term(m, anchors, p);
        Ok(clustering + triplet + 0.5 * p.lambda2 * mm.norm_squared())
    }

    fn triplet_term(&self, m: &SpdMatrix, anchors: &AnchorModel, p: &MdamlParams) -> f64 {
        let scale = p.triplet_scale();
        if scale == 0.0 || self.trips.is_empty() {
            return 0.0;
        }
        let deltas = self.deltas(m);
        let weights = self.triplet_weights(anchors, p);
        let sum: f64 = deltas
            .iter()
            .zip(weights.iter())
            .map(|(dl, w)| w * smooth_hinge(*dl))
            .sum();
        scale * sum / (anchors.k() * self.trips.len()) as f64
    }

    /// Euclidean gradient of the objective with respect to `M`.
    pub fn euclidean_gradient(
        &self,
        m: &SpdMatrix,
        anchors: &AnchorModel,
        p: &MdamlParams,
    ) -> Result<Mat> {
        self.check(m, anchors, p)?;
        let step = MetricStep::new(self, anchors, p);
        Ok(step.gradient(m))
    }

    /// The `K` coefficients of `w_ik^η` in the sub-problem for row `i`,
    /// scaled by `K` and floored at [`F_FLOOR`].
    pub fn compute_f(
        &self,
        m: &SpdMatrix,
        anchors: &AnchorModel,
        i: usize,
        p: &MdamlParams,
    ) -> Result<DVector<f64>> {
        self.check(m, anchors, p)?;
        if i >= self.data.n() {
            return Err(Error::Dimension(format!(
                "sample index {i} out of range for {} samples",
                self.data.n()
            )));
        }
        let losses = self.deltas(m).map(smooth_hinge);
        Ok(self.f_row(m, anchors, i, p, &losses))
    }

    /// `F_i·` given precomputed per-triplet hinge losses.
    pub(crate) fn f_row(
        &self,
        m: &SpdMatrix,
        anchors: &AnchorModel,
        i: usize,
        p: &MdamlParams,
        losses: &DVector<f64>,
    ) -> DVector<f64> {
        let (n, d) = (self.data.n(), self.data.dim());
        let k = anchors.k();
        let x = self.data.features();
        let scale = p.triplet_scale();
        let self_weighted = scale > 0.0 && p.weighting == TripletWeighting::SelfWeighted;
        let t = self.trips.len().max(1) as f64;
        let mut diff = DVector::zeros(d);
        DVector::from_fn(k, |kk, _| {
            for c in 0..d {
                diff[c] = x[(i, c)] - anchors.centers[(kk, c)];
            }
            let mut f = quad_form(m.as_matrix(), &diff) / n as f64;
            if self_weighted {
                let mut acc = 0.0;
                for &tt in &self.as_first[i] {
                    let partner = self.trips.as_slice()[tt].j;
                    acc += anchors.weights[(partner, kk)].powf(p.eta) * losses[tt];
                }
                for &tt in &self.as_second[i] {
                    let partner = self.trips.as_slice()[tt].i;
                    acc += anchors.weights[(partner, kk)].powf(p.eta) * losses[tt];
                }
                f += scale * acc / t;
            }
            f.max(F_FLOOR)
        })
    }
}

/// The objective restricted to `M` for fixed anchors: clustering scatter and
/// triplet weights are frozen, so each evaluation costs `O(T d²)`.
pub struct MetricStep<'p, 'a> {
    problem: &'p Problem<'a>,
    /// Scatter divided by `N K`.
    scatter: Mat,
    /// Triplet weights times `λ₁ / (K T)`.
    coef: DVector<f64>,
    lambda2: f64,
}

impl<'p, 'a> MetricStep<'p, 'a> {
    pub fn new(problem: &'p Problem<'a>, anchors: &AnchorModel, p: &MdamlParams) -> Self {
        let n = problem.data.n();
        let k = anchors.k();
        let t = problem.trips.len();
        let scatter = problem.scatter(anchors, p.eta) / (n * k) as f64;
        let scale = p.triplet_scale();
        let coef = if scale == 0.0 || t == 0 {
            DVector::zeros(t)
        } else {
            problem.triplet_weights(anchors, p) * (scale / (k * t) as f64)
        };
        Self {
            problem,
            scatter,
            coef,
            lambda2: p.lambda2,
        }
    }

    pub fn cost(&self, m: &SpdMatrix) -> f64 {
        let mm = m.as_matrix();
        let clustering = mm.dot(&self.scatter);
        let triplet: f64 = if self.coef.is_empty() {
            0.0
        } else {
            self.problem
                .deltas(m)
                .iter()
                .zip(self.coef.iter())
                .map(|(dl, c)| c * smooth_hinge(*dl))
                .sum()
        };
        clustering + triplet + 0.5 * self.lambda2 * mm.norm_squared()
    }

    pub fn gradient(&self, m: &SpdMatrix) -> Mat {
        let mm = m.as_matrix();
        let mut g = &self.scatter + mm * self.lambda2;
        if !self.coef.is_empty() {
            let deltas = self.problem.deltas(m);
            let c = DVector::from_fn(deltas.len(), |t, _| {
                self.coef[t] * smooth_hinge_deriv(deltas[t])
            });
            if c.iter().any(|v| *v != 0.0) {
                let dr = &self.problem.diff_dissimilar;
                let ds = &self.problem.diff_similar;
                let mut dr_scaled = dr.clone();
                let mut ds_scaled = ds.clone();
                for (t, (mut a, mut b)) in dr_scaled
                    .column_iter_mut()
                    .zip(ds_scaled.column_iter_mut())
                    .enumerate()
                {
                    a *= c[t];
                    b *= c[t];
                }
                g += dr_scaled * dr.transpose() - ds_scaled * ds.transpose();
            }
        }
        (&g + g.transpose()) * 0.5
    }
}

/// Objective for one-off evaluation. Builds a [`Problem`] internally.
pub fn objective(
    m: &SpdMatrix,
    anchors: &AnchorModel,
    data: &Dataset,
    trips: &TripletSet,
    p: &MdamlParams,
) -> Result<f64> {
    Problem::new(data, trips)?.objective(m, anchors, p)
}

/// Euclidean gradient with respect to `M`. Builds a [`Problem`] internally.
pub fn euclidean_gradient(
    m: &SpdMatrix,
    anchors: &AnchorModel,
    data: &Dataset,
    trips: &TripletSet,
    p: &MdamlParams,
) -> Result<Mat> {
    Problem::new(data, trips)?.euclidean_gradient(m, anchors, p)
}

/// `F_i·` for one sample. Builds a [`Problem`] internally.
pub fn compute_f(
    m: &SpdMatrix,
    anchors: &AnchorModel,
    data: &Dataset,
    trips: &TripletSet,
    i: usize,
    p: &MdamlParams,
) -> Result<DVector<f64>> {
    Problem::new(data, trips)?.compute_f(m, anchors, i, p)
}
