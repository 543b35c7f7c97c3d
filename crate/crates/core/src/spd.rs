//! Geometry of the manifold of symmetric positive-definite matrices.
//!
//! Points are [`SpdMatrix`] values, which carry their symmetric
//! eigendecomposition so that square roots, inverses and the exponential
//! retraction never re-factorize the same matrix. Tangent vectors at a point
//! are symmetric matrices tagged with that point.
//!
//! ```text
//! grad_R f(W)   = W sym(G) W
//! retract_W(Z)  = W^{1/2} expm(W^{-1/2} Z W^{-1/2}) W^{1/2}
//! transport     = E Z E^T,  E = (V W^{-1})^{1/2}
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Absolute asymmetry tolerated by [`SpdMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Asymmetry tolerated by [`expm_sym`] on its input.
pub const EXPM_SYMMETRY_TOL: f64 = 1e-10;
/// Smallest admissible ratio between the extreme eigenvalues when taking roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// A symmetric positive-definite matrix together with its eigendecomposition.
///
/// Cloning is cheap; the storage is shared and immutable.
#[derive(Clone)]
pub struct SpdMatrix {
    inner: Arc<SpdInner>,
}

struct SpdInner {
    data: Mat,
    eigenvalues: DVector<f64>,
    eigenvectors: Mat,
}

impl std::fmt::Debug for SpdMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdMatrix")
            .field("dim", &self.dim())
            .field("data", &self.inner.data)
            .finish()
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.inner.data == other.inner.data
    }
}

impl SpdMatrix {
    /// Validates `data` (square, symmetric within [`SYMMETRY_TOL`], positive
    /// definite) and wraps it.
    pub fn new(data: Mat) -> Result<Self> {
        check_square(&data)?;
        let asym = max_asymmetry(&data);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        Self::from_symmetric(sym_part_unchecked(&data))
    }

    /// Wraps a matrix that is already exactly symmetric, checking only
    /// finiteness and positive definiteness.
    fn from_symmetric(data: Mat) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "matrix entry",
                iteration: 0,
            });
        }
        let eig = SymmetricEigen::new(data.clone());
        let min = eig.eigenvalues.min();
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite(min));
        }
        Ok(Self {
            inner: Arc::new(SpdInner {
                data,
                eigenvalues: eig.eigenvalues,
                eigenvectors: eig.eigenvectors,
            }),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            inner: Arc::new(SpdInner {
                data: Mat::identity(dim, dim),
                eigenvalues: DVector::from_element(dim, 1.0),
                eigenvectors: Mat::identity(dim, dim),
            }),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Mat::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.inner.data.nrows()
    }

    pub fn as_matrix(&self) -> &Mat {
        &self.inner.data
    }

    pub fn into_matrix(self) -> Mat {
        self.inner.data.clone()
    }

    /// Eigenvalues in the order produced by the symmetric solver.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.inner.eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.inner.eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.inner.eigenvalues.max()
    }

    /// Applies a scalar function to the spectrum: `Q f(Λ) Qᵀ`, symmetrized.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Mat {
        spectral_function(&self.inner.eigenvectors, &self.inner.eigenvalues, f)
    }

    pub fn inverse(&self) -> Mat {
        self.map_spectrum(|l| 1.0 / l)
    }

    /// Returns `(W^{1/2}, W^{-1/2})`.
    pub fn sqrt_and_invsqrt(&self) -> Result<(SpdMatrix, SpdMatrix)> {
        let min = self.min_eigenvalue();
        let max = self.max_eigenvalue();
        if min < EIGEN_FLOOR * max {
            return Err(Error::IllConditioned(min / max));
        }
        let q = &self.inner.eigenvectors;
        let sqrt_vals = self.inner.eigenvalues.map(f64::sqrt);
        let inv_vals = sqrt_vals.map(|s| 1.0 / s);
        let sqrt = Self::with_eigen(q.clone(), sqrt_vals);
        let inv = Self::with_eigen(q.clone(), inv_vals);
        Ok((sqrt, inv))
    }

    /// Builds `Q diag(vals) Qᵀ` reusing a known orthonormal basis.
    fn with_eigen(q: Mat, vals: DVector<f64>) -> Self {
        let data = spectral_function(&q, &vals, |v| v);
        Self {
            inner: Arc::new(SpdInner {
                data,
                eigenvalues: vals,
                eigenvectors: q,
            }),
        }
    }
}

/// A symmetric matrix in the tangent space at `base`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    data: Mat,
    base: SpdMatrix,
}

impl TangentVector {
    /// Tags a symmetric matrix as tangent at `base`.
    pub fn new(base: &SpdMatrix, data: Mat) -> Result<Self> {
        check_same_dim(base.as_matrix(), &data)?;
        let asym = max_asymmetry(&data);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self {
            data: sym_part_unchecked(&data),
            base: base.clone(),
        })
    }

    pub fn zero(base: &SpdMatrix) -> Self {
        let d = base.dim();
        Self {
            data: Mat::zeros(d, d),
            base: base.clone(),
        }
    }

    pub fn as_matrix(&self) -> &Mat {
        &self.data
    }

    pub fn base(&self) -> &SpdMatrix {
        &self.base
    }

    pub fn is_at(&self, point: &SpdMatrix) -> bool {
        self.base == *point
    }

    pub fn scale(&self, a: f64) -> TangentVector {
        TangentVector {
            data: &self.data * a,
            base: self.base.clone(),
        }
    }

    /// `a·self + b·other`; both vectors must share a base point.
    pub fn lin_comb(&self, a: f64, other: &TangentVector, b: f64) -> Result<TangentVector> {
        if !other.is_at(&self.base) {
            return Err(Error::BasePointMismatch);
        }
        Ok(TangentVector {
            data: &self.data * a + &other.data * b,
            base: self.base.clone(),
        })
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &TangentVector) -> f64 {
        self.data.dot(&other.data)
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    /// Affine-invariant inner product `tr(W⁻¹ U W⁻¹ V)` at the shared base point.
    pub fn affine_inner(&self, other: &TangentVector) -> f64 {
        let inv = self.base.inverse();
        let a = &inv * &self.data;
        let b = &inv * &other.data;
        a.transpose().dot(&b)
    }

    pub fn inner_with(&self, other: &TangentVector, metric: TangentMetric) -> f64 {
        match metric {
            TangentMetric::Frobenius => self.inner(other),
            TangentMetric::AffineInvariant => self.affine_inner(other),
        }
    }
}

/// Inner product used on tangent spaces by the conjugate-gradient machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TangentMetric {
    Frobenius,
    /// `tr(W⁻¹ U W⁻¹ V)`, the metric under which `W sym(G) W` is the gradient.
    #[default]
    AffineInvariant,
}

/// How tangent vectors are carried between base points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    /// Affine-invariant parallel transport `E Z Eᵀ`.
    Airm,
    /// Orthogonal re-projection onto the target tangent space.
    #[default]
    Reprojection,
}

fn check_square(a: &Mat) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn check_same_dim(a: &Mat, b: &Mat) -> Result<()> {
    check_square(b)?;
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Largest `|a_ij - a_ji|`.
pub fn max_asymmetry(a: &Mat) -> f64 {
    let n = a.nrows().min(a.ncols());
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn sym_part_unchecked(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

fn spectral_function(q: &Mat, vals: &DVector<f64>, f: impl Fn(f64) -> f64) -> Mat {
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(vals[j]);
    }
    sym_part_unchecked(&(scaled * q.transpose()))
}

/// `½(A + Aᵀ)`.
pub fn sym_part(a: &Mat) -> Result<Mat> {
    check_square(a)?;
    Ok(sym_part_unchecked(a))
}

/// Maps a Euclidean gradient `G` at `W` to the Riemannian gradient `W sym(G) W`.
pub fn project_to_tangent(w: &SpdMatrix, g: &Mat) -> Result<TangentVector> {
    check_same_dim(w.as_matrix(), g)?;
    let wm = w.as_matrix();
    let out = sym_part_unchecked(&(wm * sym_part_unchecked(g) * wm));
    Ok(TangentVector {
        data: out,
        base: w.clone(),
    })
}

/// Matrix exponential of a symmetric matrix via its eigendecomposition.
pub fn expm_sym(s: &Mat) -> Result<SpdMatrix> {
    check_square(s)?;
    let asym = max_asymmetry(s);
    if asym > EXPM_SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(sym_part_unchecked(s));
    let vals = eig.eigenvalues.map(f64::exp);
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "matrix exponential",
            iteration: 0,
        });
    }
    let min = vals.min();
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite(min));
    }
    Ok(SpdMatrix::with_eigen(eig.eigenvectors, vals))
}

/// Free-function form of [`SpdMatrix::sqrt_and_invsqrt`].
pub fn sqrt_and_invsqrt(w: &SpdMatrix) -> Result<(SpdMatrix, SpdMatrix)> {
    w.sqrt_and_invsqrt()
}

/// Exponential-map retraction of `z` at `w`.
pub fn retract(w: &SpdMatrix, z: &TangentVector) -> Result<SpdMatrix> {
    if !z.is_at(w) {
        return Err(Error::BasePointMismatch);
    }
    let (half, inv_half) = w.sqrt_and_invsqrt()?;
    let (h, ih) = (half.as_matrix(), inv_half.as_matrix());
    let inner = sym_part_unchecked(&(ih * z.as_matrix() * ih));
    let eig = SymmetricEigen::new(inner);
    // Gram form B Bᵀ with B = W^{1/2} Q exp(Λ/2) keeps the product PSD in floating point.
    let mut b = h * eig.eigenvectors;
    for (j, mut col) in b.column_iter_mut().enumerate() {
        col *= (0.5 * eig.eigenvalues[j]).exp();
    }
    let out = sym_part_unchecked(&(&b * b.transpose()));
    SpdMatrix::from_symmetric(out)
}

/// Affine-invariant parallel transport of `z` from `from` to `to`.
pub fn parallel_transport(
    z: &TangentVector,
    from: &SpdMatrix,
    to: &SpdMatrix,
) -> Result<TangentVector> {
    if from.dim() != to.dim() {
        return Err(Error::Dimension(format!(
            "transport between dimensions {} and {}",
            from.dim(),
            to.dim()
        )));
    }
    if !z.is_at(from) {
        return Err(Error::BasePointMismatch);
    }
    if from == to {
        return Ok(TangentVector {
            data: z.data.clone(),
            base: to.clone(),
        });
    }
    let (half, inv_half) = from.sqrt_and_invsqrt()?;
    let (h, ih) = (half.as_matrix(), inv_half.as_matrix());
    let middle = SpdMatrix::from_symmetric(sym_part_unchecked(&(ih * to.as_matrix() * ih)))?;
    let (middle_half, _) = middle.sqrt_and_invsqrt()?;
    let e = h * middle_half.as_matrix() * ih;
    let out = sym_part_unchecked(&(&e * z.as_matrix() * e.transpose()));
    Ok(TangentVector {
        data: out,
        base: to.clone(),
    })
}

/// Vector transport selected by `kind`.
pub fn transport(
    z: &TangentVector,
    from: &SpdMatrix,
    to: &SpdMatrix,
    kind: TransportKind,
) -> Result<TangentVector> {
    match kind {
        TransportKind::Airm => parallel_transport(z, from, to),
        TransportKind::Reprojection => {
            if from.dim() != to.dim() {
                return Err(Error::Dimension(format!(
                    "transport between dimensions {} and {}",
                    from.dim(),
                    to.dim()
                )));
            }
            if !z.is_at(from) {
                return Err(Error::BasePointMismatch);
            }
            // The tangent space at every point is Sym(d), so the orthogonal
            // projection is the symmetric part.
            Ok(TangentVector {
                data: sym_part_unchecked(&z.data),
                base: to.clone(),
            })
        }
    }
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> Mat {
        Mat::from_row_slice(2, 2, &[a, b, c, d])
    }

    #[test]
    fn sym_part_examples() {
        assert_eq!(
            sym_part(&m2(0.0, 1.0, 0.0, 0.0)).unwrap(),
            m2(0.0, 0.5, 0.5, 0.0)
        );
        assert_eq!(
            sym_part(&m2(1.0, 2.0, 4.0, 3.0)).unwrap(),
            m2(1.0, 3.0, 3.0, 3.0)
        );
        let s = m2(1.0, 2.0, 2.0, 5.0);
        assert_eq!(sym_part(&s).unwrap(), s);
        assert!(matches!(
            sym_part(&Mat::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let g = m2(3.0, 1.0, -2.0, 7.0);
        let id = SpdMatrix::identity(2);
        assert_eq!(
            project_to_tangent(&id, &g).unwrap().as_matrix(),
            &sym_part(&g).unwrap()
        );
        let w = SpdMatrix::from_diagonal(&[2.0, 1.0]).unwrap();
        let p = project_to_tangent(&w, &m2(0.0, 1.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(p.as_matrix(), &m2(0.0, 1.0, 1.0, 0.0), epsilon = 1e-15);
        let z = project_to_tangent(&id, &Mat::zeros(2, 2)).unwrap();
        assert_eq!(z.as_matrix(), &Mat::zeros(2, 2));
        assert!(project_to_tangent(&id, &Mat::zeros(3, 3)).is_err());
    }

    #[test]
    fn spd_constructor_rejects_bad_input() {
        assert!(matches!(
            SpdMatrix::new(m2(1.0, 0.1, 0.0, 1.0)),
            Err(Error::NotSymmetric(_))
        ));
        assert!(matches!(
            SpdMatrix::new(m2(1.0, 2.0, 2.0, 1.0)),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(SpdMatrix::new(Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn expm_examples() {
        let e = expm_sym(&Mat::zeros(3, 3)).unwrap();
        assert_abs_diff_eq!(e.as_matrix(), &Mat::identity(3, 3), epsilon = 1e-15);

        let e = expm_sym(&m2(0.3, 0.0, 0.0, -1.2)).unwrap();
        assert_abs_diff_eq!(
            e.as_matrix(),
            &m2(0.3f64.exp(), 0.0, 0.0, (-1.2f64).exp()),
            epsilon = 1e-14
        );

        let t = 0.7f64;
        let e = expm_sym(&m2(0.0, t, t, 0.0)).unwrap();
        assert_abs_diff_eq!(
            e.as_matrix(),
            &m2(t.cosh(), t.sinh(), t.sinh(), t.cosh()),
            epsilon = 1e-14
        );

        assert!(matches!(
            expm_sym(&m2(0.0, 1.0, 0.0, 0.0)),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn sqrt_examples() {
        let (s, i) = SpdMatrix::identity(3).sqrt_and_invsqrt().unwrap();
        assert_abs_diff_eq!(s.as_matrix(), &Mat::identity(3, 3), epsilon = 1e-15);
        assert_abs_diff_eq!(i.as_matrix(), &Mat::identity(3, 3), epsilon = 1e-15);

        let w = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let (s, i) = sqrt_and_invsqrt(&w).unwrap();
        assert_abs_diff_eq!(s.as_matrix(), &m2(2.0, 0.0, 0.0, 3.0), epsilon = 1e-14);
        assert_abs_diff_eq!(
            i.as_matrix(),
            &m2(0.5, 0.0, 0.0, 1.0 / 3.0),
            epsilon = 1e-14
        );

        for seed in 0..20 {
            let w = random_spd(6, seed, 0.1);
            let (s, i) = w.sqrt_and_invsqrt().unwrap();
            let recon = s.as_matrix() * s.as_matrix();
            assert!((recon - w.as_matrix()).abs().max() < 1e-10);
            let id = s.as_matrix() * i.as_matrix();
            assert!((id - Mat::identity(6, 6)).abs().max() < 1e-10);
        }
    }

    #[test]
    fn sqrt_rejects_ill_conditioned() {
        let w = SpdMatrix::from_diagonal(&[1.0, 1e-14]).unwrap();
        assert!(matches!(
            w.sqrt_and_invsqrt(),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn retract_examples() {
        for seed in 0..10 {
            let w = random_spd(5, seed, 0.5);
            let out = retract(&w, &TangentVector::zero(&w)).unwrap();
            assert!((out.as_matrix() - w.as_matrix()).abs().max() < 1e-12);
        }
        let id = SpdMatrix::identity(2);
        let z = TangentVector::new(&id, m2(0.4, 0.0, 0.0, -2.0)).unwrap();
        let out = retract(&id, &z).unwrap();
        assert_abs_diff_eq!(
            out.as_matrix(),
            &m2(0.4f64.exp(), 0.0, 0.0, (-2.0f64).exp()),
            epsilon = 1e-14
        );

        let other = SpdMatrix::from_diagonal(&[2.0, 2.0]).unwrap();
        assert!(matches!(retract(&other, &z), Err(Error::BasePointMismatch)));
    }

    #[test]
    fn transport_examples() {
        let w = random_spd(4, 3, 0.2);
        let z = TangentVector::new(&w, random_sym(4, 4, 1.0)).unwrap();
        let same = parallel_transport(&z, &w, &w).unwrap();
        assert_eq!(same.as_matrix(), z.as_matrix());

        let id = SpdMatrix::identity(2);
        let four = SpdMatrix::from_diagonal(&[4.0, 4.0]).unwrap();
        let z = TangentVector::new(&id, m2(1.0, -0.5, -0.5, 2.0)).unwrap();
        let out = parallel_transport(&z, &id, &four).unwrap();
        assert_abs_diff_eq!(out.as_matrix(), &(z.as_matrix() * 4.0), epsilon = 1e-13);
        assert!(out.is_at(&four));

        let re = transport(&z, &id, &four, TransportKind::Reprojection).unwrap();
        assert_eq!(re.as_matrix(), z.as_matrix());
        assert!(parallel_transport(&z, &id, &SpdMatrix::identity(3)).is_err());
    }

    #[test]
    fn airm_transport_preserves_affine_inner_product() {
        // <U,V>_W = tr(W^-1 U W^-1 V) is preserved by the AIRM transport.
        let w = random_spd(4, 11, 0.3);
        let v = random_spd(4, 12, 0.3);
        let a = TangentVector::new(&w, random_sym(4, 13, 1.0)).unwrap();
        let b = TangentVector::new(&w, random_sym(4, 14, 1.0)).unwrap();
        let ip = |p: &SpdMatrix, x: &Mat, y: &Mat| {
            let inv = p.inverse();
            (&inv * x * &inv * y).trace()
        };
        let before = ip(&w, a.as_matrix(), b.as_matrix());
        let ta = parallel_transport(&a, &w, &v).unwrap();
        let tb = parallel_transport(&b, &w, &v).unwrap();
        let after = ip(&v, ta.as_matrix(), tb.as_matrix());
        assert!((before - after).abs() < 1e-9 * before.abs().max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn expm_eigenvalues_are_exponentials(seed in 0u64..10_000, d in 2usize..8) {
            let s = random_sym(d, seed, 2.0);
            let mut expected: Vec<f64> =
                SymmetricEigen::new(s.clone()).eigenvalues.iter().map(|v| v.exp()).collect();
            let e = expm_sym(&s).unwrap();
            let mut got: Vec<f64> =
                SymmetricEigen::new(e.as_matrix().clone()).eigenvalues.iter().copied().collect();
            expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (g, e) in got.iter().zip(&expected) {
                prop_assert!((g - e).abs() <= 1e-10 * e.abs());
            }
        }

        #[test]
        fn retraction_stays_spd(seed in 0u64..10_000, d in 2usize..11, norm in 0.0f64..10.0) {
            let w = random_spd(d, seed, 1.0);
            let raw = random_sym(d, seed ^ 0xabcd, 1.0);
            let scaled = if raw.norm() > 0.0 { &raw * (norm / raw.norm()) } else { raw };
            let z = TangentVector::new(&w, scaled).unwrap();
            let out = retract(&w, &z).unwrap();
            prop_assert!(out.min_eigenvalue() > 0.0);
            prop_assert!(max_asymmetry(out.as_matrix()) <= SYMMETRY_TOL);
        }

        #[test]
        fn transport_output_is_symmetric(seed in 0u64..10_000, d in 2usize..8) {
            let from = random_spd(d, seed, 0.1);
            let to = random_spd(d, seed + 1, 0.1);
            let z = TangentVector::new(&from, random_sym(d, seed + 2, 3.0)).unwrap();
            let out = parallel_transport(&z, &from, &to).unwrap();
            let m = out.as_matrix();
            prop_assert!((m - m.transpose()).norm() <= 1e-10);
        }
    }
}
