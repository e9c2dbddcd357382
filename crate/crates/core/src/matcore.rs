//! Dense symmetric-matrix primitives.
//!
//! Square roots are taken through the symmetric eigendecomposition so that the
//! root is itself symmetric (`S * S = A` with `S = S'`), which a Cholesky
//! factor does not give.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for positive-definiteness checks.
pub const PD_TOL: f64 = 1e-10;

/// Eigenvalues at or below this fraction of the largest are treated as zero
/// by the square-root routines.
const ROOT_REL_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-10;

/// A square matrix whose storage is exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Accepts a matrix that is symmetric up to rounding and averages it with
    /// its transpose so the stored entries agree exactly.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("matrix has non-finite entries".into()));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self::symmetrize(m))
    }

    /// Builds from the lower triangle of `f(i, j)` (`i >= j`).
    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..=i {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymmetricMatrix(m)
    }

    pub fn identity(k: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(k, k))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymmetricMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub(crate) fn symmetrize(m: DMatrix<f64>) -> Self {
        let k = m.nrows();
        let mut out = m;
        for i in 0..k {
            for j in 0..i {
                let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        SymmetricMatrix(out)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymmetricMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch("matrix rows must all have length k".into()));
        }
        SymmetricMatrix::new(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
    }
}

impl From<SymmetricMatrix> for Vec<Vec<f64>> {
    fn from(m: SymmetricMatrix) -> Self {
        m.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// A symmetric, unit-diagonal, positive semi-definite matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CorrelationMatrix(SymmetricMatrix);

impl CorrelationMatrix {
    pub fn new(m: SymmetricMatrix) -> Result<Self> {
        let k = m.dim();
        for i in 0..k {
            if (m.get(i, i) - 1.0).abs() >= 1e-12 {
                return Err(Error::InvalidCorrelation(format!(
                    "diagonal entry {i} is {}",
                    m.get(i, i)
                )));
            }
            for j in 0..i {
                if m.get(i, j).abs() > 1.0 + 1e-12 {
                    return Err(Error::InvalidCorrelation(format!(
                        "entry ({i}, {j}) = {} lies outside [-1, 1]",
                        m.get(i, j)
                    )));
                }
            }
        }
        let min_eig = m.min_eigenvalue();
        if min_eig < -1e-10 {
            return Err(Error::InvalidCorrelation(format!(
                "smallest eigenvalue {min_eig:e} is negative"
            )));
        }
        let mut inner = m.into_inner();
        inner.fill_diagonal(1.0);
        Ok(CorrelationMatrix(SymmetricMatrix(inner)))
    }

    /// Wraps a matrix the caller guarantees is a valid correlation matrix.
    pub(crate) fn from_unchecked(m: DMatrix<f64>) -> Self {
        CorrelationMatrix(SymmetricMatrix(m))
    }

    pub fn identity(k: usize) -> Self {
        CorrelationMatrix(SymmetricMatrix::identity(k))
    }

    /// Equicorrelation matrix with every off-diagonal equal to `rho`.
    pub fn equicorrelation(k: usize, rho: f64) -> Result<Self> {
        Self::new(SymmetricMatrix::from_fn(k, |i, j| if i == j { 1.0 } else { rho }))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_symmetric(&self) -> &SymmetricMatrix {
        &self.0
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.0.as_matrix()
    }
}

impl TryFrom<Vec<Vec<f64>>> for CorrelationMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        CorrelationMatrix::new(SymmetricMatrix::try_from(rows)?)
    }
}

impl From<CorrelationMatrix> for Vec<Vec<f64>> {
    fn from(m: CorrelationMatrix) -> Self {
        m.0.into()
    }
}

fn checked_eigen(a: &SymmetricMatrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let eig = SymmetricEigen::new(a.as_matrix().clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= ROOT_REL_TOL * max {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(eig)
}

fn spectral_map(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(eig.eigenvalues[j]);
    }
    SymmetricMatrix::symmetrize(scaled * v.transpose())
}

/// Symmetric square root `S` with `S * S = a`.
pub fn sym_sqrt(a: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let eig = checked_eigen(a)?;
    Ok(spectral_map(&eig, f64::sqrt))
}

/// Symmetric inverse square root `S` with `S * a * S = I`.
pub fn sym_inv_sqrt(a: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let eig = checked_eigen(a)?;
    Ok(spectral_map(&eig, |l| 1.0 / l.sqrt()))
}

/// Inverse square root of `a + ridge * I`. With `ridge = 0` this is
/// [`sym_inv_sqrt`].
pub fn sym_inv_sqrt_ridge(a: &SymmetricMatrix, ridge: f64) -> Result<SymmetricMatrix> {
    if ridge == 0.0 {
        return sym_inv_sqrt(a);
    }
    let k = a.dim();
    let shifted = a.as_matrix() + DMatrix::identity(k, k) * ridge;
    sym_inv_sqrt(&SymmetricMatrix(shifted))
}

/// True iff the smallest eigenvalue exceeds `tol * max(1, largest eigenvalue)`.
pub fn is_positive_definite(a: &SymmetricMatrix, tol: f64) -> bool {
    let ev = a.eigenvalues();
    if ev.iter().any(|v| !v.is_finite()) {
        return false;
    }
    ev.min() > tol * ev.max().max(1.0)
}

/// `q[i][j] / sqrt(q[i][i] * q[j][j])`, with the diagonal set to exactly one.
pub fn normalize_to_correlation(q: &SymmetricMatrix) -> Result<CorrelationMatrix> {
    let k = q.dim();
    let mut inv_sd = Vec::with_capacity(k);
    for i in 0..k {
        let d = q.get(i, i);
        if !(d > 0.0) {
            return Err(Error::NonPositiveDiagonal { index: i, value: d });
        }
        inv_sd.push(1.0 / d.sqrt());
    }
    let m = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            (q.get(i, j) * inv_sd[i] * inv_sd[j]).clamp(-1.0, 1.0)
        }
    });
    Ok(CorrelationMatrix::from_unchecked(m))
}

/// Column means of a `T x k` matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let t = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / t))
}

/// Sample covariance with divisor `T - 1`.
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    let t = x.nrows();
    if t < 2 {
        return Err(Error::TooShort { needed: 2, got: t });
    }
    let means = column_means(x);
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let cov = centered.transpose() * &centered / (t as f64 - 1.0);
    Ok(SymmetricMatrix::symmetrize(cov))
}

/// Pearson correlation matrix of the columns of `x`.
pub fn sample_correlation(x: &DMatrix<f64>) -> Result<CorrelationMatrix> {
    let cov = sample_covariance(x)?;
    for i in 0..cov.dim() {
        let v = cov.get(i, i);
        if !(v > 0.0) || v <= 1e-28 * x.column(i).amax().powi(2) {
            return Err(Error::DegenerateColumn(i));
        }
    }
    normalize_to_correlation(&cov)
}

/// In-place Cholesky factorization of the lower triangle of `a`. Returns
/// false if a pivot is not strictly positive. The strict upper triangle is
/// left untouched.
pub(crate) fn cholesky_in_place(a: &mut DMatrix<f64>) -> bool {
    let k = a.nrows();
    for j in 0..k {
        let mut d = a[(j, j)];
        for p in 0..j {
            d -= a[(j, p)] * a[(j, p)];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in (j + 1)..k {
            let mut s = a[(i, j)];
            for p in 0..j {
                s -= a[(i, p)] * a[(j, p)];
            }
            a[(i, j)] = s / d;
        }
    }
    true
}

/// Solves `L y = b` in place for the lower-triangular factor stored in `l`.
pub(crate) fn forward_substitute(l: &DMatrix<f64>, b: &mut [f64]) {
    let k = l.nrows();
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= l[(i, p)] * b[p];
        }
        b[i] = s / l[(i, i)];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_spd(k: usize, seed: u64) -> SymmetricMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        SymmetricMatrix::symmetrize(&m * m.transpose() + DMatrix::identity(k, k))
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let s = sym_sqrt(&SymmetricMatrix::identity(3)).unwrap();
        assert!((s.as_matrix() - DMatrix::identity(3, 3)).amax() < 1e-14);
        let s = sym_sqrt(&SymmetricMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert!((s.get(0, 0) - 2.0).abs() < 1e-14);
        assert!((s.get(1, 1) - 3.0).abs() < 1e-14);
        assert!(s.get(0, 1).abs() < 1e-14);
    }

    #[test]
    fn sqrt_of_random_spd_reproduces_input() {
        let a = random_spd(5, 7);
        let s = sym_sqrt(&a).unwrap();
        let err = (s.as_matrix() * s.as_matrix() - a.as_matrix()).amax();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn inverse_root_cases() {
        let s = sym_inv_sqrt(&SymmetricMatrix::identity(2)).unwrap();
        assert!((s.as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-14);
        let s = sym_inv_sqrt(&SymmetricMatrix::from_diagonal(&[4.0])).unwrap();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        let a = random_spd(4, 11);
        let s = sym_inv_sqrt(&a).unwrap();
        let sandwich = s.as_matrix() * a.as_matrix() * s.as_matrix();
        assert!((sandwich - DMatrix::identity(4, 4)).amax() < 1e-9);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = SymmetricMatrix::try_from(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(sym_sqrt(&a), Err(Error::NotPositiveDefinite { .. })));
        assert!(matches!(sym_inv_sqrt(&a), Err(Error::NotPositiveDefinite { .. })));
        assert!(sym_inv_sqrt_ridge(&a, 1e-3).is_ok());
    }

    #[test]
    fn positive_definite_checks() {
        assert!(is_positive_definite(&SymmetricMatrix::identity(3), 1e-10));
        let singular = SymmetricMatrix::try_from(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(!is_positive_definite(&singular, 1e-10));
        // eigenvalues 0.001 and 1.999
        let near = SymmetricMatrix::try_from(vec![vec![1.0, 0.999], vec![0.999, 1.0]]).unwrap();
        let ev = near.eigenvalues();
        assert!((ev.min() - 0.001).abs() < 1e-12 && (ev.max() - 1.999).abs() < 1e-12);
        assert!(is_positive_definite(&near, 1e-10));
    }

    #[test]
    fn normalization_examples() {
        let r = normalize_to_correlation(&SymmetricMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_eq!(r, CorrelationMatrix::identity(2));
        let q = SymmetricMatrix::try_from(vec![vec![4.0, 3.0], vec![3.0, 9.0]]).unwrap();
        let r = normalize_to_correlation(&q).unwrap();
        assert!((r.get(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(r.get(0, 0), 1.0);
        let bad = SymmetricMatrix::from_diagonal(&[1.0, 0.0]);
        assert!(matches!(
            normalize_to_correlation(&bad),
            Err(Error::NonPositiveDiagonal { index: 1, .. })
        ));
    }

    #[test]
    fn correlation_constructor_rejects_bad_input() {
        let off = SymmetricMatrix::try_from(vec![vec![1.0, 1.2], vec![1.2, 1.0]]).unwrap();
        assert!(CorrelationMatrix::new(off).is_err());
        let diag = SymmetricMatrix::from_diagonal(&[1.0, 2.0]);
        assert!(CorrelationMatrix::new(diag).is_err());
        let indefinite = SymmetricMatrix::from_fn(3, |i, j| if i == j { 1.0 } else { -0.9 });
        assert!(CorrelationMatrix::new(indefinite).is_err());
        assert!(SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0])).is_err());
    }

    #[test]
    fn sample_correlation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let col: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        let dup = DMatrix::from_fn(50, 2, |i, _| col[i]);
        assert!((sample_correlation(&dup).unwrap().get(0, 1) - 1.0).abs() < 1e-14);
        let neg = DMatrix::from_fn(50, 2, |i, j| if j == 0 { col[i] } else { -col[i] });
        assert!((sample_correlation(&neg).unwrap().get(0, 1) + 1.0).abs() < 1e-14);

        let x = DMatrix::from_fn(100, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = sample_correlation(&x).unwrap();
        // direct Pearson computation as oracle
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (x.column(i), x.column(j));
                let (ma, mb) = (a.mean(), b.mean());
                let sab: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p - ma) * (q - mb)).sum();
                let saa: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
                let sbb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
                assert!((r.get(i, j) - sab / (saa * sbb).sqrt()).abs() < 1e-13);
                if i != j {
                    assert!(r.get(i, j).abs() < 0.35);
                }
            }
        }
        let constant = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        assert!(matches!(sample_correlation(&constant), Err(Error::DegenerateColumn(0))));
    }

    #[test]
    fn cholesky_helper_matches_nalgebra() {
        let a = random_spd(4, 5);
        let mut l = a.as_matrix().clone();
        assert!(cholesky_in_place(&mut l));
        let reference = a.as_matrix().clone().cholesky().unwrap().l();
        for i in 0..4 {
            for j in 0..=i {
                assert!((l[(i, j)] - reference[(i, j)]).abs() < 1e-12);
            }
        }
        let mut b = vec![1.0, 2.0, 3.0, 4.0];
        forward_substitute(&l, &mut b);
        let lb = reference * DVector::from_vec(b);
        assert!((lb - DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])).amax() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sqrt_and_inverse_sqrt_are_consistent(k in 1usize..=10, seed in any::<u64>()) {
            let a = random_spd(k, seed);
            let s = sym_sqrt(&a).unwrap();
            let scale = a.as_matrix().amax();
            prop_assert!((s.as_matrix() * s.as_matrix() - a.as_matrix()).amax() < 1e-10 * scale);
            let inv = sym_inv_sqrt(&a).unwrap();
            let s_inv = s.as_matrix().clone().try_inverse().unwrap();
            prop_assert!((inv.as_matrix() - s_inv).amax() < 1e-9);
        }

        #[test]
        fn normalization_is_idempotent(k in 2usize..=6, seed in any::<u64>()) {
            let r = normalize_to_correlation(&random_spd(k, seed)).unwrap();
            let again = normalize_to_correlation(r.as_symmetric()).unwrap();
            prop_assert!((r.as_matrix() - again.as_matrix()).amax() < 1e-15);
        }

        #[test]
        fn sample_correlation_is_pd(k in 1usize..=6, extra in 1usize..40, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = k + extra;
            let x = DMatrix::from_fn(t, k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let r = sample_correlation(&x).unwrap();
            for i in 0..k {
                prop_assert_eq!(r.get(i, i), 1.0);
            }
            prop_assert!(is_positive_definite(r.as_symmetric(), 1e-10));
        }
    }
}
