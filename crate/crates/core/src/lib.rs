//! Rank-constrained second-order estimators built around the three-term PCA.
//!
//! The crate covers the full estimator family that reconstructs a reference
//! signal `x` from an observation `y` through at most `k` principal
//! components:
//!
//! * GBT1: rank-`k` linear estimator on `y` alone,
//! * GBT2: rank-`k` estimator on `[y; v]` with an auxiliary vector `v`,
//! * GKLT: rank-`k` estimator on `[y; y∘y]`,
//! * three-term PCA: `T0·y + T1·s` where `s = w − E_wy·E_yy†·y` is a
//!   decorrelated random injection, optionally extended by an `h`-injection,
//! * three-term filter: the unconstrained version of the above.
//!
//! Every fit comes with a closed-form error prediction. When the
//! covariances are sample covariances, the prediction equals the
//! training-set reconstruction error up to rounding.
//!
//! The numerical core is generic over [`Real`] (`f64` and `f32`); the
//! aliases at the crate root fix it to `f64`, which is what the harness and
//! the CLI use.

pub mod error;
pub mod harness;
pub mod matcore;
pub mod oracle;
pub mod scalar;
pub mod stats;
pub mod transforms;

pub use error::{Error, Result};
pub use scalar::Real;

/// Dense `f64` matrix.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense `f64` column vector.
pub type Vector = nalgebra::DVector<f64>;

pub type SampleMatrix = stats::SampleMatrix<f64>;
pub type SampleSet = stats::SampleSet<f64>;
pub type SecondOrderModel = stats::SecondOrderModel<f64>;
pub type SpectralData = matcore::SpectralData<f64>;
pub type Transform = transforms::RankKTransform<f64>;
pub type PrincipalComponents = transforms::PrincipalComponents<f64>;

pub type SampleMatrix32 = stats::SampleMatrix<f32>;
pub type SampleSet32 = stats::SampleSet<f32>;
pub type SecondOrderModel32 = stats::SecondOrderModel<f32>;
pub type Transform32 = transforms::RankKTransform<f32>;

pub use stats::{Dist, InjectionSpec, Role};
pub use transforms::Method;
