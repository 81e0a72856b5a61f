use std::fmt::{Debug, Display, LowerExp};

use nalgebra::{DMatrix, RealField};
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the estimators are generic over.
///
/// `RealField` supplies the arithmetic nalgebra's decompositions need;
/// the num-traits conversions move constants and random draws in and out.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Unit roundoff of the type.
    fn machine_epsilon() -> Self;

    /// Converts an `f64` literal. Panics only if the value is not
    /// representable, which never happens for finite constants.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Thin SVD `(U, σ, V)` with `σ` nonincreasing, or `None` on failure.
    fn thin_svd_raw(m: &DMatrix<Self>) -> Option<(DMatrix<Self>, Vec<Self>, DMatrix<Self>)>;

    /// Eigen-decomposition `(λ, Q)` of a symmetric matrix, `λ` nondecreasing.
    fn sym_eigen_raw(m: &DMatrix<Self>) -> Option<(Vec<Self>, DMatrix<Self>)>;
}

fn to_faer<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> faer::Mat<T> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer<T: nalgebra::Scalar + Copy>(m: faer::MatRef<'_, T>) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn faer_sym_eigen<T>(m: &DMatrix<T>) -> Option<(Vec<T>, DMatrix<T>)>
where
    T: nalgebra::Scalar + Copy + faer::traits::RealField,
{
    let eig = to_faer(m).self_adjoint_eigen(faer::Side::Lower).ok()?;
    let s = eig.S().column_vector();
    Some(((0..s.nrows()).map(|i| s[i]).collect(), from_faer(eig.U())))
}

fn faer_thin_svd<T>(m: &DMatrix<T>) -> Option<(DMatrix<T>, Vec<T>, DMatrix<T>)>
where
    T: nalgebra::Scalar + Copy + faer::traits::RealField,
{
    let svd = to_faer(m).thin_svd().ok()?;
    let s = svd.S().column_vector();
    Some((from_faer(svd.U()), (0..s.nrows()).map(|i| s[i]).collect(), from_faer(svd.V())))
}

impl Real for f64 {
    #[inline]
    fn machine_epsilon() -> Self {
        f64::EPSILON
    }

    fn thin_svd_raw(m: &DMatrix<Self>) -> Option<(DMatrix<Self>, Vec<Self>, DMatrix<Self>)> {
        faer_thin_svd(m)
    }

    fn sym_eigen_raw(m: &DMatrix<Self>) -> Option<(Vec<Self>, DMatrix<Self>)> {
        faer_sym_eigen(m)
    }
}

impl Real for f32 {
    #[inline]
    fn machine_epsilon() -> Self {
        f32::EPSILON
    }

    fn thin_svd_raw(m: &DMatrix<Self>) -> Option<(DMatrix<Self>, Vec<Self>, DMatrix<Self>)> {
        faer_thin_svd(m)
    }

    fn sym_eigen_raw(m: &DMatrix<Self>) -> Option<(Vec<Self>, DMatrix<Self>)> {
        faer_sym_eigen(m)
    }
}
