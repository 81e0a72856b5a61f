//! Dense spectral primitives: SVD, pseudo-inverses, PSD square roots,
//! truncated SVD and range projectors.
//!
//! Everything here is a pure function of its inputs. Symmetric inputs are
//! symmetrized as `(M + Mᵀ)/2` before any eigen-decomposition, and
//! eigenvalues/singular values are always reported in nonincreasing order.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Real, Result};

/// Relative asymmetry accepted by the symmetric routines.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Relative negative-eigenvalue magnitude that is clamped to zero.
pub const PSD_CLAMP_TOL: f64 = 1e-8;

/// How the numerical-rank cutoff of a decomposition is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RankTolerance<T> {
    /// `max(m, n) · σ₁ · ε`.
    #[default]
    Default,
    /// Fixed absolute cutoff.
    Absolute(T),
}

impl<T: Real> RankTolerance<T> {
    pub fn resolve(&self, rows: usize, cols: usize, sigma_max: T) -> T {
        match *self {
            RankTolerance::Default => T::lit(rows.max(cols) as f64) * sigma_max * T::machine_epsilon(),
            RankTolerance::Absolute(t) => t,
        }
    }
}

/// Full singular value decomposition `M = U·Σ·Vᵀ`.
#[derive(Debug, Clone)]
pub struct SpectralData<T: Real> {
    /// `m × m` orthogonal factor.
    pub u: DMatrix<T>,
    /// `min(m, n)` singular values, nonincreasing.
    pub sigma: Vec<T>,
    /// `n × n` orthogonal factor.
    pub v: DMatrix<T>,
    pub tol: T,
    /// Number of singular values strictly above `tol`.
    pub eff_rank: usize,
}

impl<T: Real> SpectralData<T> {
    /// Rebuilds `U·Σ·Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let (m, n) = (self.u.nrows(), self.v.nrows());
        let mut sigma = DMatrix::zeros(m, n);
        for (i, s) in self.sigma.iter().enumerate() {
            sigma[(i, i)] = *s;
        }
        &self.u * sigma * self.v.transpose()
    }
}

/// Thin SVD, singular values sorted descending.
#[derive(Debug, Clone)]
pub(crate) struct ThinSvd<T: Real> {
    pub u: DMatrix<T>,
    pub sigma: Vec<T>,
    pub v: DMatrix<T>,
}

/// Symmetric eigen-decomposition with eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymEigen<T: Real> {
    pub values: Vec<T>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<T>,
}

impl<T: Real> SymEigen<T> {
    /// First `k` eigenvectors.
    pub fn leading(&self, k: usize) -> DMatrix<T> {
        self.vectors.columns(0, k.min(self.vectors.ncols())).into_owned()
    }

    /// Sum of the `k` largest eigenvalues.
    pub fn leading_sum(&self, k: usize) -> T {
        self.values.iter().take(k).fold(T::zero(), |acc, v| acc + *v)
    }

    /// True when the `k`-th and `(k+1)`-th eigenvalues coincide within `tol`,
    /// i.e. the rank-`k` leading subspace is not unique.
    pub fn split_is_degenerate(&self, k: usize, tol: T) -> bool {
        k >= 1 && k < self.values.len() && (self.values[k - 1] - self.values[k]).abs() <= tol
    }

    /// Default numerical-rank tolerance of the decomposed matrix.
    pub fn default_tol(&self) -> T {
        let top = self.values.first().copied().unwrap_or_else(T::zero).max(T::zero());
        T::lit(self.values.len() as f64) * top * T::machine_epsilon()
    }
}

/// Result of `[M]_k`.
#[derive(Debug, Clone)]
pub struct Truncation<T: Real> {
    pub matrix: DMatrix<T>,
    /// `Σ_{i>k} σ_i²`.
    pub residual_sq: T,
    /// Set when `σ_k ≈ σ_{k+1}`, so the best rank-`k` approximation is not unique.
    pub nonunique: bool,
}

/// Orthogonal projector onto a range.
#[derive(Debug, Clone)]
pub struct Projector<T: Real> {
    pub p: DMatrix<T>,
}

impl<T: Real> Projector<T> {
    pub fn apply(&self, m: &DMatrix<T>) -> DMatrix<T> {
        &self.p * m
    }
}

pub fn frob_sq<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc + *v * *v)
}

pub fn frob<T: Real>(m: &DMatrix<T>) -> T {
    frob_sq(m).sqrt()
}

pub fn trace<T: Real>(m: &DMatrix<T>) -> T {
    (0..m.nrows().min(m.ncols())).fold(T::zero(), |acc, i| acc + m[(i, i)])
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

fn ensure_finite<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what}: matrix has non-finite entries")))
    }
}

/// `[A B]`.
pub fn hstack<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    assert_eq!(a.nrows(), b.nrows(), "hstack row mismatch");
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `[A; B]`.
pub fn vstack<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    assert_eq!(a.ncols(), b.ncols(), "vstack column mismatch");
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

/// Block-diagonal `blkdiag(A, C)`.
pub fn blkdiag<T: Real>(a: &DMatrix<T>, c: &DMatrix<T>) -> DMatrix<T> {
    let mut out = DMatrix::zeros(a.nrows() + c.nrows(), a.ncols() + c.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), c.shape()).copy_from(c);
    out
}

pub(crate) fn thin_svd<T: Real>(m: &DMatrix<T>) -> Result<ThinSvd<T>> {
    let (rows, cols) = m.shape();
    let r = rows.min(cols);
    if r == 0 {
        return Ok(ThinSvd { u: DMatrix::zeros(rows, 0), sigma: Vec::new(), v: DMatrix::zeros(cols, 0) });
    }
    let (u, sigma, v) = T::thin_svd_raw(m).ok_or_else(|| Error::numerical("SVD did not converge"))?;
    Ok(ThinSvd { u, sigma, v })
}

/// Extends an orthonormal `d × r` column set to a `d × d` orthogonal matrix.
///
/// Each new column is the standard basis vector with the largest component
/// outside the current span, orthogonalized twice.
fn complete_basis<T: Real>(q: &DMatrix<T>) -> DMatrix<T> {
    let d = q.nrows();
    let mut cols: Vec<DVector<T>> = q.column_iter().map(|c| c.into_owned()).collect();
    while cols.len() < d {
        let mut best: Option<(T, DVector<T>)> = None;
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = T::one();
            for _ in 0..2 {
                for c in &cols {
                    let dot = c.dot(&e);
                    e.axpy(-dot, c, T::one());
                }
            }
            let n = e.norm();
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, e));
            }
        }
        let (n, e) = best.expect("d > 0");
        cols.push(e / n);
    }
    DMatrix::from_columns(&cols)
}

/// Full SVD with singular values in nonincreasing order.
pub fn svd<T: Real>(m: &DMatrix<T>, tol: RankTolerance<T>) -> Result<SpectralData<T>> {
    ensure_finite(m, "svd")?;
    let (rows, cols) = m.shape();
    let thin = thin_svd(m)?;
    let sigma_max = thin.sigma.first().copied().unwrap_or_else(T::zero);
    let tol = tol.resolve(rows, cols, sigma_max);
    let eff_rank = thin.sigma.iter().filter(|s| **s > tol).count();
    let u = if rows == 0 { DMatrix::zeros(0, 0) } else { complete_basis(&thin.u) };
    let v = if cols == 0 { DMatrix::zeros(0, 0) } else { complete_basis(&thin.v) };
    Ok(SpectralData { u, sigma: thin.sigma, v, tol, eff_rank })
}

/// Numerical rank under the default tolerance.
pub fn numerical_rank<T: Real>(m: &DMatrix<T>) -> Result<usize> {
    let thin = thin_svd(m)?;
    let sigma_max = thin.sigma.first().copied().unwrap_or_else(T::zero);
    let tol = RankTolerance::Default.resolve(m.nrows(), m.ncols(), sigma_max);
    Ok(thin.sigma.iter().filter(|s| **s > tol).count())
}

/// Moore–Penrose pseudo-inverse via SVD.
pub fn pseudo_inverse<T: Real>(m: &DMatrix<T>, tol: RankTolerance<T>) -> Result<DMatrix<T>> {
    ensure_finite(m, "pseudo_inverse")?;
    let (rows, cols) = m.shape();
    let thin = thin_svd(m)?;
    let sigma_max = thin.sigma.first().copied().unwrap_or_else(T::zero);
    let tol = tol.resolve(rows, cols, sigma_max);
    let mut vs = thin.v.clone();
    for (j, s) in thin.sigma.iter().enumerate() {
        let inv = if *s > tol { T::one() / *s } else { T::zero() };
        vs.column_mut(j).scale_mut(inv);
    }
    Ok(vs * thin.u.transpose())
}

/// Best rank-`k` approximation `[M]_k`. For `k ≥ rank(M)` the input is
/// returned unchanged.
pub fn truncated<T: Real>(m: &DMatrix<T>, k: usize) -> Result<Truncation<T>> {
    ensure_finite(m, "truncated")?;
    let thin = thin_svd(m)?;
    let sigma_max = thin.sigma.first().copied().unwrap_or_else(T::zero);
    let tol = RankTolerance::Default.resolve(m.nrows(), m.ncols(), sigma_max);
    let rank = thin.sigma.iter().filter(|s| **s > tol).count();
    if k >= rank {
        let residual_sq = thin.sigma.iter().skip(k).fold(T::zero(), |a, s| a + *s * *s);
        return Ok(Truncation { matrix: m.clone(), residual_sq, nonunique: false });
    }
    let nonunique = k >= 1 && (thin.sigma[k - 1] - thin.sigma[k]).abs() <= tol;
    let mut us = thin.u.columns(0, k).into_owned();
    for j in 0..k {
        us.column_mut(j).scale_mut(thin.sigma[j]);
    }
    let matrix = us * thin.v.columns(0, k).transpose();
    let residual_sq = thin.sigma.iter().skip(k).fold(T::zero(), |a, s| a + *s * *s);
    Ok(Truncation { matrix, residual_sq, nonunique })
}

fn check_symmetric<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(format!("{what}: matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    ensure_finite(m, what)?;
    let asym = frob(&(m - m.transpose()));
    let limit = T::lit(SYMMETRY_TOL) * (T::one() + frob(m));
    if asym > limit {
        return Err(Error::invalid(format!("{what}: matrix is not symmetric (‖M − Mᵀ‖_F = {asym:e})")));
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
pub fn sym_eigen<T: Real>(m: &DMatrix<T>) -> Result<SymEigen<T>> {
    check_symmetric(m, "sym_eigen")?;
    let d = m.nrows();
    if d == 0 {
        return Ok(SymEigen { values: Vec::new(), vectors: DMatrix::zeros(0, 0) });
    }
    let (eigenvalues, eigenvectors) = T::sym_eigen_raw(&symmetrize(m))
        .ok_or_else(|| Error::numerical("symmetric eigen-decomposition did not converge"))?;
    let mut order: Vec<usize> = (0..d).collect();
    // Stable sort keeps the decomposition's own order among ties.
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| eigenvalues[i]).collect();
    let cols: Vec<_> = order.iter().map(|&i| eigenvectors.column(i).into_owned()).collect();
    Ok(SymEigen { values, vectors: DMatrix::from_columns(&cols) })
}

/// Eigen-decomposition of a PSD matrix; slightly negative eigenvalues
/// (down to `−1e-8·‖M‖_F`) are clamped to zero.
pub fn psd_eigen<T: Real>(m: &DMatrix<T>) -> Result<SymEigen<T>> {
    let mut eig = sym_eigen(m)?;
    let floor = -T::lit(PSD_CLAMP_TOL) * frob(m);
    for v in eig.values.iter_mut() {
        if *v < T::zero() {
            if *v < floor {
                return Err(Error::invalid(format!("matrix is not positive semi-definite (eigenvalue {v:e})")));
            }
            *v = T::zero();
        }
    }
    Ok(eig)
}

fn spectral_map<T: Real>(eig: &SymEigen<T>, f: impl Fn(T) -> T) -> DMatrix<T> {
    let mut scaled = eig.vectors.clone();
    for (j, v) in eig.values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(f(*v));
    }
    symmetrize(&(scaled * eig.vectors.transpose()))
}

/// Symmetric PSD square root `M^{1/2}`.
pub fn sqrt_psd<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = psd_eigen(m)?;
    Ok(spectral_map(&eig, |v| v.sqrt()))
}

/// `(M^{1/2})†`. The rank cutoff is the numerical rank of `M` itself, so the
/// result is consistent with [`pinv_psd`]: `pinv_psd(M) = sqrt_pinv_psd(M)²`.
pub fn sqrt_pinv_psd<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = psd_eigen(m)?;
    let tol = eig.default_tol();
    Ok(spectral_map(&eig, |v| if v > tol { T::one() / v.sqrt() } else { T::zero() }))
}

/// Pseudo-inverse of a PSD matrix via its eigen-decomposition.
pub fn pinv_psd<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = psd_eigen(m)?;
    let tol = eig.default_tol();
    Ok(spectral_map(&eig, |v| if v > tol { T::one() / v } else { T::zero() }))
}

/// `M†` and `(M^{1/2})†` of a PSD matrix from one eigen-decomposition.
#[derive(Debug, Clone)]
pub struct PsdInverses<T: Real> {
    pub pinv: DMatrix<T>,
    pub sqrt_pinv: DMatrix<T>,
    pub rank: usize,
}

/// Pseudo-inverses of a PSD matrix whose rank cutoff is
/// `d · max(λ₁(M), reference) · ε`.
///
/// `reference` is the scale of the matrix `M` was derived from. A residual
/// covariance such as `E_ss = E_ww − E_wy·E_yy†·E_yw` can be pure rounding
/// noise; measured against its own `λ₁` that noise would look full rank.
pub fn psd_inverses<T: Real>(m: &DMatrix<T>, reference: T) -> Result<PsdInverses<T>> {
    let eig = psd_eigen(m)?;
    let top = eig.values.first().copied().unwrap_or_else(T::zero).max(reference);
    let tol = T::lit(eig.values.len() as f64) * top * T::machine_epsilon();
    let rank = eig.values.iter().filter(|v| **v > tol).count();
    let pinv = spectral_map(&eig, |v| if v > tol { T::one() / v } else { T::zero() });
    let sqrt_pinv = spectral_map(&eig, |v| if v > tol { T::one() / v.sqrt() } else { T::zero() });
    Ok(PsdInverses { pinv, sqrt_pinv, rank })
}

/// Orthogonal projector onto the column range of `M`.
pub fn left_projector<T: Real>(m: &DMatrix<T>) -> Result<Projector<T>> {
    ensure_finite(m, "left_projector")?;
    let thin = thin_svd(m)?;
    let sigma_max = thin.sigma.first().copied().unwrap_or_else(T::zero);
    let tol = RankTolerance::Default.resolve(m.nrows(), m.ncols(), sigma_max);
    let r = thin.sigma.iter().filter(|s| **s > tol).count();
    let ur = thin.u.columns(0, r);
    Ok(Projector { p: symmetrize(&(ur * ur.transpose())) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn svd_identity_zero_and_diagonal() {
        let s = svd(&DMatrix::<f64>::identity(3, 3), RankTolerance::Default).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
        assert_eq!(s.eff_rank, 3);

        let s = svd(&DMatrix::<f64>::zeros(2, 4), RankTolerance::Default).unwrap();
        assert_eq!(s.sigma, vec![0.0, 0.0]);
        assert_eq!(s.eff_rank, 0);
        assert_eq!(s.u.shape(), (2, 2));
        assert_eq!(s.v.shape(), (4, 4));

        let s = svd(&diag(&[3.0, 1.0]), RankTolerance::Default).unwrap();
        assert!((s.sigma[0] - 3.0).abs() < 1e-14 && (s.sigma[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_full_factors_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (r, c) in [(5, 3), (3, 5), (4, 4)] {
            let m = randn(r, c, &mut rng);
            let s = svd(&m, RankTolerance::Default).unwrap();
            let eye_u = DMatrix::identity(r, r);
            let eye_v = DMatrix::identity(c, c);
            assert!(frob(&(s.u.transpose() * &s.u - eye_u)) <= 1e-10);
            assert!(frob(&(s.v.transpose() * &s.v - eye_v)) <= 1e-10);
            assert!(frob(&(s.reconstruct() - &m)) <= 1e-10 * (1.0 + frob(&m)));
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = DMatrix::<f64>::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&m, RankTolerance::Default), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn absolute_tolerance_changes_rank() {
        let s = svd(&diag(&[3.0, 1e-3]), RankTolerance::Absolute(1e-2)).unwrap();
        assert_eq!(s.eff_rank, 1);
        assert_eq!(s.tol, 1e-2);
    }

    #[test]
    fn pseudo_inverse_analytic_cases() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!(frob(&(pseudo_inverse(&i, RankTolerance::Default).unwrap() - &i)) < 1e-14);
        let p = pseudo_inverse(&diag(&[2.0, 0.0]), RankTolerance::Default).unwrap();
        assert!(frob(&(p - diag(&[0.5, 0.0]))) < 1e-14);
    }

    #[test]
    fn pseudo_inverse_rank_two_penrose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = randn(4, 2, &mut rng) * randn(2, 3, &mut rng);
        let x = pseudo_inverse(&m, RankTolerance::Default).unwrap();
        let scale = 1.0 + frob(&m);
        assert!(frob(&(&m * &x * &m - &m)) <= 1e-8 * scale);
        assert!(frob(&(&x * &m * &x - &x)) <= 1e-8 * scale);
        assert_eq!(numerical_rank(&m).unwrap(), 2);
    }

    #[test]
    fn truncation_examples() {
        let t = truncated(&diag(&[3.0, 1.0]), 1).unwrap();
        assert!(frob(&(t.matrix - diag(&[3.0, 0.0]))) < 1e-14);
        assert!((t.residual_sq - 1.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = randn(3, 4, &mut rng);
        let t = truncated(&m, 3).unwrap();
        assert_eq!(t.matrix, m);
    }

    #[test]
    fn truncation_flags_tied_singular_values() {
        let t = truncated(&diag(&[2.0, 2.0, 1.0]), 1).unwrap();
        assert!(t.nonunique);
        let t = truncated(&diag(&[3.0, 2.0, 1.0]), 1).unwrap();
        assert!(!t.nonunique);
    }

    #[test]
    fn truncation_beats_random_rank_one_candidates() {
        // Eckart–Young oracle: no random rank-1 matrix, even with its optimal
        // scale, gets closer than [M]_1.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = randn(3, 3, &mut rng);
        let best = frob_sq(&(&m - truncated(&m, 1).unwrap().matrix));
        for _ in 0..10_000 {
            let a = randn(3, 1, &mut rng);
            let b = randn(3, 1, &mut rng);
            let c = &a * b.transpose();
            let scale = c.dot(&m) / frob_sq(&c);
            let err = frob_sq(&(&m - c * scale));
            assert!(best <= err + 1e-12);
        }
    }

    #[test]
    fn psd_roots() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!(frob(&(sqrt_psd(&i).unwrap() - &i)) < 1e-14);
        let m = diag(&[4.0, 0.0]);
        assert!(frob(&(sqrt_psd(&m).unwrap() - diag(&[2.0, 0.0]))) < 1e-14);
        assert!(frob(&(sqrt_pinv_psd(&m).unwrap() - diag(&[0.5, 0.0]))) < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = randn(5, 5, &mut rng);
        let m = &g * g.transpose();
        let r = sqrt_psd(&m).unwrap();
        assert!(frob(&(&r * &r - &m)) <= 1e-8 * frob(&m));
        assert!(frob(&(&r - r.transpose())) == 0.0);
        let rp = sqrt_pinv_psd(&m).unwrap();
        let via_svd = pseudo_inverse(&r, RankTolerance::Default).unwrap();
        assert!(frob(&(&rp - via_svd)) <= 1e-8 * frob(&rp));
        assert!(frob(&(&rp * &rp - pinv_psd(&m).unwrap())) <= 1e-8 * frob(&rp).powi(2));
    }

    #[test]
    fn psd_root_clamps_and_rejects() {
        let m = diag(&[1.0, -1e-12]);
        let r = sqrt_psd(&m).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
        assert!(matches!(sqrt_psd(&diag(&[1.0, -0.5])), Err(Error::InvalidInput(_))));
        let mut asym = DMatrix::<f64>::identity(2, 2);
        asym[(0, 1)] = 0.1;
        assert!(matches!(sqrt_psd(&asym), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn projectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let m = randn(3, 5, &mut rng);
        let p = left_projector(&m).unwrap();
        assert!(frob(&(&p.p - DMatrix::identity(3, 3))) < 1e-10);

        let z = left_projector(&DMatrix::<f64>::zeros(3, 2)).unwrap();
        assert_eq!(frob(&z.p), 0.0);

        let a = randn(4, 1, &mut rng);
        let b = randn(3, 1, &mut rng);
        let m = &a * b.transpose();
        let p = left_projector(&m).unwrap();
        let expected = &a * a.transpose() / frob_sq(&a);
        assert!(frob(&(&p.p - expected)) < 1e-12);
        assert!(frob(&(&p.p * &p.p - &p.p)) <= 1e-9);
        assert!(frob(&(p.apply(&m) - &m)) <= 1e-9 * frob(&m));
    }

    #[test]
    fn stacking_helpers() {
        let a = DMatrix::<f64>::from_element(2, 1, 1.0);
        let b = DMatrix::<f64>::from_element(2, 2, 2.0);
        assert_eq!(hstack(&a, &b).shape(), (2, 3));
        assert_eq!(vstack(&b, &DMatrix::zeros(1, 2)).shape(), (3, 2));
        let d = blkdiag(&a, &b);
        assert_eq!(d.shape(), (4, 3));
        assert_eq!(d[(0, 1)], 0.0);
        assert_eq!(d[(3, 2)], 2.0);
    }

    #[test]
    fn works_in_single_precision() {
        let m = DMatrix::<f32>::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sqrt_psd(&m).unwrap();
        assert!(frob(&(&r * &r - &m)) < 1e-5);
        let x = pseudo_inverse(&m, RankTolerance::Default).unwrap();
        assert!(frob(&(&m * x - DMatrix::identity(2, 2))) < 1e-5);
    }
}
