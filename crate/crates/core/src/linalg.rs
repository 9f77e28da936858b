//! Symmetric-matrix kernels built on a single factorization: the symmetric
//! eigendecomposition. Square roots, pseudo-inverses, numerical ranks and
//! positive-definite solves all go through [`sym_eigen`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// A real symmetric matrix. Construction symmetrizes the input as `(A + Aᵀ)/2`,
/// so `entries[i][j] == entries[j][i]` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Self::symmetrize(m))
    }

    fn symmetrize(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut out = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        SymMatrix(out)
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// `v vᵀ`-style Gram products and other matrices known to be symmetric up
    /// to rounding.
    pub(crate) fn from_nearly_symmetric(m: DMatrix<f64>) -> Self {
        Self::symmetrize(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, factor: f64) -> SymMatrix {
        SymMatrix(&self.0 * factor)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrize(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrize(&self.0 - &other.0)
    }

    /// `vᵀ A v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    fn check_finite(&self) -> Result<()> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order and
/// orthonormal eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    /// `V · diag(f(w)) · Vᵀ`.
    pub fn reassemble(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let w = f(self.values[j]);
            scaled.column_mut(j).scale_mut(w);
        }
        SymMatrix::symmetrize(scaled * self.vectors.transpose())
    }

    /// Scale used by the clipping and rank tolerances: `max(1, max |w|)`.
    pub fn scale(&self) -> f64 {
        self.values.iter().fold(1.0_f64, |acc, w| acc.max(w.abs()))
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Absolute threshold under which eigenvalues count as zero.
    fn rank_threshold(&self, rank_tol: f64) -> f64 {
        rank_tol * self.max_eigenvalue().max(0.0)
    }
}

pub fn sym_eigen(a: &SymMatrix) -> Result<Spectrum> {
    a.check_finite()?;
    let n = a.dim();
    if n == 0 {
        return Ok(Spectrum { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) });
    }
    let eig = SymmetricEigen::new(a.0.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(Spectrum { values, vectors })
}

/// Default relative rank tolerance, `dim · ε`. Multiplied by the largest
/// eigenvalue to obtain the absolute threshold.
pub fn default_rank_tol(dim: usize) -> f64 {
    dim.max(1) as f64 * f64::EPSILON
}

/// Result of projecting a symmetric matrix onto the PSD cone by zeroing small
/// negative eigenvalues.
#[derive(Debug, Clone)]
pub struct Clipped {
    pub matrix: SymMatrix,
    pub spectrum: Spectrum,
    /// Number of negative eigenvalues that were zeroed.
    pub clipped: usize,
}

/// Zeroes eigenvalues in `[-clip_tol·scale, 0)`; anything more negative is an
/// error. `clip_tol = ∞` always clips.
pub fn clip_psd(a: &SymMatrix, clip_tol: f64) -> Result<Clipped> {
    if clip_tol.is_nan() || clip_tol < 0.0 {
        return Err(Error::InvalidInput("clip_tol must be nonnegative".into()));
    }
    let mut spectrum = sym_eigen(a)?;
    let bound = -clip_tol * spectrum.scale();
    let mut clipped = 0;
    for w in spectrum.values.iter_mut() {
        if *w < bound {
            return Err(Error::NotPositiveSemidefinite { eigenvalue: *w, bound });
        }
        if *w < 0.0 {
            *w = 0.0;
            clipped += 1;
        }
    }
    let matrix = if clipped == 0 { a.clone() } else { spectrum.reassemble(|w| w) };
    Ok(Clipped { matrix, spectrum, clipped })
}

/// Symmetric PSD square root `S` of `clip(a)`, with `S·S = clip(a)` and the
/// same range.
pub fn psd_sqrt(a: &SymMatrix, clip_tol: f64) -> Result<SymMatrix> {
    let c = clip_psd(a, clip_tol)?;
    Ok(c.spectrum.reassemble(f64::sqrt))
}

/// Moore–Penrose pseudo-inverse of a PSD matrix. Eigenvalues at or below
/// `rank_tol · w_max` (including negative ones) are treated as zero.
pub fn pinv_psd(a: &SymMatrix, rank_tol: f64) -> Result<SymMatrix> {
    let spectrum = sym_eigen(a)?;
    Ok(pinv_from_spectrum(&spectrum, rank_tol))
}

pub(crate) fn pinv_from_spectrum(spectrum: &Spectrum, rank_tol: f64) -> SymMatrix {
    let threshold = spectrum.rank_threshold(rank_tol);
    spectrum.reassemble(|w| if w > threshold && w > 0.0 { 1.0 / w } else { 0.0 })
}

/// Orthogonal projector onto the span of eigenvectors with eigenvalue above
/// the rank threshold.
pub(crate) fn range_projector(spectrum: &Spectrum, rank_tol: f64) -> SymMatrix {
    let threshold = spectrum.rank_threshold(rank_tol);
    spectrum.reassemble(|w| if w > threshold && w > 0.0 { 1.0 } else { 0.0 })
}

pub fn numerical_rank(a: &SymMatrix, rank_tol: f64) -> Result<usize> {
    let spectrum = sym_eigen(a)?;
    Ok(rank_of_spectrum(&spectrum, rank_tol))
}

pub(crate) fn rank_of_spectrum(spectrum: &Spectrum, rank_tol: f64) -> usize {
    let threshold = spectrum.rank_threshold(rank_tol);
    spectrum.values.iter().filter(|&&w| w > threshold && w > 0.0).count()
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &SymMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != a.dim() {
        return Err(Error::InvalidInput(format!(
            "right-hand side has length {}, matrix is {}x{}",
            b.len(),
            a.dim(),
            a.dim()
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("right-hand side has non-finite entries".into()));
    }
    let spectrum = sym_eigen(a)?;
    solve_with_spectrum(&spectrum, b, default_rank_tol(a.dim()))
}

pub(crate) fn solve_with_spectrum(
    spectrum: &Spectrum,
    b: &DVector<f64>,
    rank_tol: f64,
) -> Result<DVector<f64>> {
    let n = spectrum.values.len();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let threshold = spectrum.rank_threshold(rank_tol);
    let w_min = spectrum.values[n - 1];
    if !(w_min > threshold && w_min > 0.0) {
        return Err(Error::SingularSystem);
    }
    let mut coords = spectrum.vectors.tr_mul(b);
    for (c, w) in coords.iter_mut().zip(spectrum.values.iter()) {
        *c /= w;
    }
    Ok(&spectrum.vectors * coords)
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        let n = rows.len();
        SymMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn construction_symmetrizes() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        let s = SymMatrix::new(m).unwrap();
        assert_eq!(s.matrix()[(0, 1)], 3.0);
        assert_eq!(s.matrix()[(1, 0)], 3.0);
    }

    #[test]
    fn rejects_non_finite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(matches!(SymMatrix::new(m), Err(Error::InvalidInput(_))));
        let mut raw = SymMatrix::identity(2);
        raw.0[(0, 0)] = f64::INFINITY;
        assert!(matches!(sym_eigen(&raw), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn eigen_of_identity() {
        let e = sym_eigen(&SymMatrix::identity(3)).unwrap();
        for w in e.values.iter() {
            assert_abs_diff_eq!(*w, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn eigen_of_diagonal_is_sorted_axis_permutation() {
        let e = sym_eigen(&SymMatrix::from_diagonal(&[1.0, 4.0])).unwrap();
        assert_abs_diff_eq!(e.values[0], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.vectors[(1, 0)].abs(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.vectors[(0, 1)].abs(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eigen_reconstructs_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = DMatrix::from_fn(5, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = SymMatrix::new(&g * g.transpose()).unwrap();
        let e = sym_eigen(&a).unwrap();
        for k in 1..5 {
            assert!(e.values[k - 1] >= e.values[k]);
        }
        let back = e.reassemble(|w| w);
        let tol = 1e-10 * a.max_abs().max(1.0);
        assert!(max_abs_diff(back.matrix(), a.matrix()) < tol);
        let vtv = e.vectors.transpose() * &e.vectors;
        assert!(max_abs_diff(&vtv, &DMatrix::identity(5, 5)) < 1e-12);
    }

    #[test]
    fn sqrt_of_diagonal() {
        let s = psd_sqrt(&SymMatrix::from_diagonal(&[4.0, 9.0]), 0.0).unwrap();
        assert!(max_abs_diff(s.matrix(), SymMatrix::from_diagonal(&[2.0, 3.0]).matrix()) < 1e-14);
    }

    #[test]
    fn sqrt_of_zero() {
        let s = psd_sqrt(&SymMatrix::zeros(3), 0.0).unwrap();
        assert_eq!(s.max_abs(), 0.0);
    }

    #[test]
    fn sqrt_of_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = DMatrix::from_fn(4, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = SymMatrix::new(&f * f.transpose()).unwrap();
        let s = psd_sqrt(&a, f64::INFINITY).unwrap();
        assert!(max_abs_diff(&(s.matrix() * s.matrix()), a.matrix()) < 1e-10);
        assert_eq!(numerical_rank(&s, 1e-6).unwrap(), 2);
    }

    #[test]
    fn clipping_respects_tolerance() {
        let a = SymMatrix::from_diagonal(&[1.0, -1e-3]);
        let c = clip_psd(&a, 1e-2).unwrap();
        assert_eq!(c.clipped, 1);
        assert_eq!(c.matrix.matrix()[(1, 1)], 0.0);
        match psd_sqrt(&a, 1e-4) {
            Err(Error::NotPositiveSemidefinite { eigenvalue, .. }) => assert_eq!(eigenvalue, -1e-3),
            other => panic!("expected NotPositiveSemidefinite, got {other:?}"),
        }
        assert!(psd_sqrt(&SymMatrix::from_diagonal(&[1.0, -50.0]), f64::INFINITY).is_ok());
    }

    #[test]
    fn pinv_of_diagonal_with_null_direction() {
        let g = pinv_psd(&SymMatrix::from_diagonal(&[2.0, 0.0]), default_rank_tol(2)).unwrap();
        assert!(max_abs_diff(g.matrix(), SymMatrix::from_diagonal(&[0.5, 0.0]).matrix()) < 1e-15);
    }

    #[test]
    fn pinv_of_identity() {
        let g = pinv_psd(&SymMatrix::identity(4), default_rank_tol(4)).unwrap();
        assert!(max_abs_diff(g.matrix(), &DMatrix::identity(4, 4)) < 1e-15);
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let x = solve_spd(&SymMatrix::identity(2), &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0]);
        let x = solve_spd(&sym(&[&[2.0, 0.0], &[0.0, 4.0]]), &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn solve_random_spd_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = SymMatrix::new(&g * g.transpose() + DMatrix::identity(6, 6)).unwrap();
        let b = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = solve_spd(&a, &b).unwrap();
        let oracle = a.matrix().clone().try_inverse().unwrap() * &b;
        assert!((&x - &oracle).amax() < 1e-10);
        assert!((a.matrix() * &x - &b).norm() <= 1e-8 * (b.norm() + 1.0));
    }

    #[test]
    fn solve_singular_fails() {
        let r = solve_spd(&SymMatrix::from_diagonal(&[1.0, 0.0]), &DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(r, Err(Error::SingularSystem));
    }

    fn psd_strategy() -> impl Strategy<Value = (DMatrix<f64>, usize)> {
        (1usize..=6, any::<u64>()).prop_flat_map(|(dim, seed)| {
            (0..=dim).prop_map(move |rank| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let eig: Vec<f64> = (0..dim)
                    .map(|k| if k < rank { rng.random_range(0.1..10.0) } else { 0.0 })
                    .collect();
                (psd_with_eigenvalues(&mut rng, &eig), rank)
            })
        })
    }

    fn moore_penrose_ok(a: &DMatrix<f64>, g: &DMatrix<f64>) -> bool {
        let scale = a.amax().max(g.amax()).max(1.0);
        let tol = 1e-8 * scale * scale * scale;
        let aga = a * g * a;
        let gag = g * a * g;
        let ag = a * g;
        let ga = g * a;
        max_abs_diff(&aga, a) < tol
            && max_abs_diff(&gag, g) < tol
            && max_abs_diff(&ag, &ag.transpose()) < tol
            && max_abs_diff(&ga, &ga.transpose()) < tol
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn sqrt_squares_back((a, _rank) in psd_strategy()) {
            let a = SymMatrix::new(a).unwrap();
            let s = psd_sqrt(&a, f64::INFINITY).unwrap();
            let c = clip_psd(&a, f64::INFINITY).unwrap();
            let scale = c.spectrum.scale();
            prop_assert!(max_abs_diff(&(s.matrix() * s.matrix()), c.matrix.matrix()) < 1e-8 * scale);
        }

        #[test]
        fn pinv_satisfies_moore_penrose((a, rank) in psd_strategy()) {
            let a = SymMatrix::new(a).unwrap();
            let g = pinv_psd(&a, 1e-9).unwrap();
            prop_assert!(moore_penrose_ok(a.matrix(), g.matrix()));
            prop_assert_eq!(numerical_rank(&a, 1e-9).unwrap(), rank);
        }

        #[test]
        fn pinv_is_an_involution((a, _rank) in psd_strategy()) {
            let a = SymMatrix::new(a).unwrap();
            let gg = pinv_psd(&pinv_psd(&a, 1e-9).unwrap(), 1e-9).unwrap();
            let c = clip_psd(&a, f64::INFINITY).unwrap();
            prop_assert!(max_abs_diff(gg.matrix(), c.matrix.matrix()) < 1e-8 * c.spectrum.scale());
        }

        #[test]
        fn pinv_inverts_full_rank(dim in 1usize..=6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eig: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..10.0)).collect();
            let a = SymMatrix::new(psd_with_eigenvalues(&mut rng, &eig)).unwrap();
            let g = pinv_psd(&a, default_rank_tol(dim)).unwrap();
            prop_assert!(max_abs_diff(&(g.matrix() * a.matrix()), &DMatrix::identity(dim, dim)) < 1e-8);
        }
    }
}
