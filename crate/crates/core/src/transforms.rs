//! Fitting, applying and error-predicting the rank-constrained estimators.
//!
//! Every estimator has the form `x̂ = T0·y + T1·r` where the second regressor
//! `r` depends on the method:
//!
//! | method     | `r`                                   | rank constraint |
//! |------------|---------------------------------------|-----------------|
//! | `gbt1`     | none                                  | `rank T0 ≤ k`   |
//! | `gbt2`     | auxiliary `v` (dimension `n`)         | `rank [T0 T1] ≤ k` |
//! | `gklt`     | `y∘y`                                 | `rank [T0 T1] ≤ k` |
//! | `pca3`     | `s = w − E_wy·E_yy†·y`                | `rank [T0 T1] ≤ k` |
//! | `pca3_ext` | `[s; g]`, `g = h − E_hz·E_zz†·z`      | `rank [T0 T1] ≤ k` |
//! | `ttf`      | `s`                                   | none            |
//!
//! All rank-constrained fits return the minimum-norm solution
//! `U_k·U_kᵀ·E_xz·E_zz†`, where `U_k` holds the leading eigenvectors of
//! `G_z = E_xz·E_zz†·E_zx`, and predict the error
//! `tr(E_xx) − Σ_{i≤k} λ_i(G_z)`.

use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::matcore::{self, frob, frob_sq, psd_inverses, trace, SymEigen};
use crate::stats::{self, cross_cov, gen_injection, InjectionSpec, Role, SampleMatrix, SampleSet, SecondOrderModel};
use crate::{Error, Real, Result};

/// Largest negative rounding excess tolerated by [`predicted_error`],
/// relative to `1 + tr(E_xx)`.
pub const NEGATIVE_ERROR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gbt1,
    Gbt2,
    Gklt,
    Pca3,
    Pca3Ext,
    Ttf,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Gbt1, Method::Gbt2, Method::Gklt, Method::Pca3, Method::Pca3Ext, Method::Ttf];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gbt1 => "gbt1",
            Method::Gbt2 => "gbt2",
            Method::Gklt => "gklt",
            Method::Pca3 => "pca3",
            Method::Pca3Ext => "pca3_ext",
            Method::Ttf => "ttf",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }

    pub fn is_rank_constrained(self) -> bool {
        self != Method::Ttf
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the second regressor is formed from raw inputs.
#[derive(Debug, Clone)]
enum SecondTerm<T: Real> {
    None,
    /// Auxiliary vector used as is.
    Auxiliary {
        mean: DVector<T>,
    },
    /// Hadamard square of `y`, centered by the training mean of `y∘y`.
    Square {
        mean: DVector<T>,
    },
    /// `s = w − gain_wy·y`, optionally followed by `g = h − gain_hz·[y; s]`.
    Injection {
        w_mean: DVector<T>,
        gain_wy: DMatrix<T>,
        ext: Option<Extension<T>>,
    },
}

#[derive(Debug, Clone)]
struct Extension<T: Real> {
    h_mean: DVector<T>,
    gain_hz: DMatrix<T>,
}

/// Injection samples and specs kept from training.
#[derive(Debug, Clone)]
struct TrainingAux<T: Real> {
    second: Option<SampleMatrix<T>>,
    h: Option<SampleMatrix<T>>,
    second_spec: Option<InjectionSpec>,
    h_spec: Option<InjectionSpec>,
}

impl<T: Real> Default for TrainingAux<T> {
    fn default() -> Self {
        TrainingAux { second: None, h: None, second_spec: None, h_spec: None }
    }
}

/// Second-regressor and `h` samples fed to an application.
type Inputs<S> = (Option<S>, Option<S>);

/// A fitted estimator `x̂ = T0·y + T1·r`.
#[derive(Debug, Clone)]
pub struct RankKTransform<T: Real> {
    method: Method,
    t0: DMatrix<T>,
    t1: DMatrix<T>,
    k: Option<usize>,
    predicted_err: T,
    nonunique: bool,
    basis: Option<DMatrix<T>>,
    spectrum: Vec<T>,
    second: SecondTerm<T>,
    x_mean: DVector<T>,
    y_mean: DVector<T>,
    training: TrainingAux<T>,
}

/// Principal components of a rank-constrained fit.
#[derive(Debug, Clone)]
pub struct PrincipalComponents<T: Real> {
    /// `k × p` scores.
    pub scores: DMatrix<T>,
    /// `m × k` orthonormal reconstruction basis.
    pub basis: DMatrix<T>,
    pub x_mean: DVector<T>,
}

impl<T: Real> PrincipalComponents<T> {
    /// `basis·scores + mean`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let mut out = &self.basis * &self.scores;
        for mut col in out.column_iter_mut() {
            col += &self.x_mean;
        }
        out
    }
}

impl<T: Real> RankKTransform<T> {
    pub fn method(&self) -> Method {
        self.method
    }

    /// `m × n` block acting on `y`.
    pub fn t0(&self) -> &DMatrix<T> {
        &self.t0
    }

    /// Block acting on the second regressor (`m × 0` for `gbt1`).
    pub fn t1(&self) -> &DMatrix<T> {
        &self.t1
    }

    /// Rank budget; `None` for the unconstrained filter.
    pub fn k(&self) -> Option<usize> {
        self.k
    }

    pub fn predicted_err(&self) -> T {
        self.predicted_err
    }

    /// Set when the `k`-th and `(k+1)`-th eigenvalues of `G_z` tie, so the
    /// rank-`k` solution is one of several.
    pub fn nonunique(&self) -> bool {
        self.nonunique
    }

    /// Eigenvalues of `G_z` (nonincreasing) for rank-constrained methods.
    pub fn spectrum(&self) -> &[T] {
        &self.spectrum
    }

    /// Dimension of the second regressor.
    pub fn second_dim(&self) -> usize {
        self.t1.ncols()
    }

    /// `[T0 T1]`.
    pub fn stacked(&self) -> DMatrix<T> {
        matcore::hstack(&self.t0, &self.t1)
    }

    /// Numerical rank of `[T0 T1]` at `σ₁·max(dim)·ε`.
    pub fn rank_certificate(&self) -> Result<usize> {
        matcore::numerical_rank(&self.stacked())
    }

    /// Training samples of the `w`-, `v`-injection if they were kept.
    pub fn training_second(&self) -> Option<&SampleMatrix<T>> {
        self.training.second.as_ref()
    }

    pub fn training_h(&self) -> Option<&SampleMatrix<T>> {
        self.training.h.as_ref()
    }

    fn with_training(mut self, samples: Option<&SampleSet<T>>, second: Option<Role>, h: Option<Role>) -> Self {
        if let Some(set) = samples {
            if let Some(role) = second {
                self.training.second = set.get(role).cloned();
                self.training.second_spec = set.spec(role).copied();
            }
            if let Some(role) = h {
                self.training.h = set.get(role).cloned();
                self.training.h_spec = set.spec(role).copied();
            }
        }
        self
    }

    fn centered_rows(sm: &SampleMatrix<T>, mean: &DVector<T>) -> DMatrix<T> {
        if &sm.mean == mean {
            return sm.data.clone();
        }
        let shift = &sm.mean - mean;
        let mut out = sm.data.clone();
        for mut col in out.column_iter_mut() {
            col += &shift;
        }
        out
    }

    /// Second regressor for the given inputs, centered with training means.
    fn regressor(
        &self,
        y_c: &DMatrix<T>,
        y: &SampleMatrix<T>,
        second: Option<&SampleMatrix<T>>,
        h: Option<&SampleMatrix<T>>,
    ) -> Result<DMatrix<T>> {
        let p = y_c.ncols();
        let need = |sm: Option<&SampleMatrix<T>>, what: &str, dim: usize| -> Result<DMatrix<T>> {
            let sm = sm.ok_or_else(|| Error::invalid(format!("{} needs {what} samples to apply", self.method)))?;
            if sm.p() != p || sm.dim() != dim {
                return Err(Error::invalid(format!("{what} samples are {}x{}, expected {dim}x{p}", sm.dim(), sm.p())));
            }
            Ok(sm.data.clone())
        };
        match &self.second {
            SecondTerm::None => Ok(DMatrix::zeros(0, p)),
            SecondTerm::Auxiliary { mean } => {
                need(second, "auxiliary", mean.len())?;
                Ok(Self::centered_rows(second.expect("checked"), mean))
            }
            SecondTerm::Square { mean } => {
                let mut sq = y.raw().map(|v| v * v);
                for mut col in sq.column_iter_mut() {
                    col -= mean;
                }
                Ok(sq)
            }
            SecondTerm::Injection { w_mean, gain_wy, ext } => {
                need(second, "w-injection", w_mean.len())?;
                let w_c = Self::centered_rows(second.expect("checked"), w_mean);
                let s = w_c - gain_wy * y_c;
                match ext {
                    None => Ok(s),
                    Some(e) => {
                        need(h, "h-injection", e.h_mean.len())?;
                        let h_c = Self::centered_rows(h.expect("checked"), &e.h_mean);
                        let z = matcore::vstack(y_c, &s);
                        let g = h_c - &e.gain_hz * z;
                        Ok(matcore::vstack(&s, &g))
                    }
                }
            }
        }
    }

    fn centered_estimate(
        &self,
        y: &SampleMatrix<T>,
        second: Option<&SampleMatrix<T>>,
        h: Option<&SampleMatrix<T>>,
    ) -> Result<DMatrix<T>> {
        if y.dim() != self.t0.ncols() {
            return Err(Error::invalid(format!(
                "observation has dimension {}, transform expects {}",
                y.dim(),
                self.t0.ncols()
            )));
        }
        let y_c = Self::centered_rows(y, &self.y_mean);
        let r = self.regressor(&y_c, y, second, h)?;
        Ok(&self.t0 * y_c + &self.t1 * r)
    }

    fn training_inputs(&self, y: &SampleMatrix<T>) -> Result<Inputs<&SampleMatrix<T>>> {
        let needs_second = matches!(self.second, SecondTerm::Auxiliary { .. } | SecondTerm::Injection { .. });
        if needs_second {
            let second =
                self.training.second.as_ref().ok_or_else(|| Error::invalid("transform kept no training injections"))?;
            if second.p() != y.p() {
                return Err(Error::invalid(format!(
                    "reusing training injections needs the training sample count {}, got {}",
                    second.p(),
                    y.p()
                )));
            }
        }
        Ok((self.training.second.as_ref(), self.training.h.as_ref()))
    }

    fn fresh_inputs(&self, p: usize, seed: u64) -> Result<Inputs<SampleMatrix<T>>> {
        let draw = |spec: Option<InjectionSpec>, salt: u64| -> Result<SampleMatrix<T>> {
            let spec = spec.ok_or_else(|| {
                Error::invalid(format!("{} was fit on supplied injections; pass them explicitly", self.method))
            })?;
            let fresh = InjectionSpec { seed: spec.seed ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt, ..spec };
            gen_injection(&fresh, p)
        };
        match &self.second {
            SecondTerm::None | SecondTerm::Square { .. } => Ok((None, None)),
            SecondTerm::Auxiliary { .. } | SecondTerm::Injection { ext: None, .. } => {
                Ok((Some(draw(self.training.second_spec, 1)?), None))
            }
            SecondTerm::Injection { ext: Some(_), .. } => {
                Ok((Some(draw(self.training.second_spec, 1)?), Some(draw(self.training.h_spec, 2)?)))
            }
        }
    }

    fn finish(&self, centered: DMatrix<T>) -> Result<SampleMatrix<T>> {
        let mut raw = centered;
        for mut col in raw.column_iter_mut() {
            col += &self.x_mean;
        }
        stats::center(raw, Role::X)
    }

    /// Reconstructs `x̂` from `y`.
    ///
    /// With `reuse_training_injections`, the stored training injections are
    /// used and `y` must have the training sample count. Otherwise fresh
    /// injections are drawn from the stored specs; this removes the
    /// in-sample benefit of the injections.
    pub fn apply(&self, y: &SampleMatrix<T>, reuse_training_injections: bool) -> Result<SampleMatrix<T>> {
        if reuse_training_injections {
            let (second, h) = self.training_inputs(y)?;
            self.finish(self.centered_estimate(y, second, h)?)
        } else {
            if matches!(self.second, SecondTerm::Auxiliary { .. } | SecondTerm::Injection { .. }) {
                warn!("{}: applying with freshly drawn injections; expect the GBT1-level error", self.method);
            }
            self.apply_fresh(y, 0)
        }
    }

    /// Applies with injections freshly drawn from the stored specs, salted
    /// by `seed`.
    pub fn apply_fresh(&self, y: &SampleMatrix<T>, seed: u64) -> Result<SampleMatrix<T>> {
        let (second, h) = self.fresh_inputs(y.p(), seed)?;
        self.finish(self.centered_estimate(y, second.as_ref(), h.as_ref())?)
    }

    /// Applies with explicitly supplied second-regressor samples (`w` or `v`)
    /// and `h`-injection.
    pub fn apply_with(
        &self,
        y: &SampleMatrix<T>,
        second: Option<&SampleMatrix<T>>,
        h: Option<&SampleMatrix<T>>,
    ) -> Result<SampleMatrix<T>> {
        self.finish(self.centered_estimate(y, second, h)?)
    }

    /// Principal components `u = U_kᵀ·(T0·y + T1·r)` on the training
    /// injections.
    pub fn principal_components(&self, y: &SampleMatrix<T>) -> Result<PrincipalComponents<T>> {
        let basis = self
            .basis
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{} has no principal components", self.method)))?;
        let (second, h) = self.training_inputs(y)?;
        let est = self.centered_estimate(y, second, h)?;
        Ok(PrincipalComponents { scores: basis.transpose() * est, basis: basis.clone(), x_mean: self.x_mean.clone() })
    }
}

/// `(1/p)·‖X − X̂‖_F²` on raw samples.
pub fn reconstruction_error<T: Real>(x: &SampleMatrix<T>, x_hat: &SampleMatrix<T>) -> Result<T> {
    if x.data.shape() != x_hat.data.shape() {
        return Err(Error::invalid(format!(
            "reconstruction is {:?}, reference is {:?}",
            x_hat.data.shape(),
            x.data.shape()
        )));
    }
    let diff = &x.data - &x_hat.data;
    let mean_gap = &x.mean - &x_hat.mean;
    let p = T::lit(x.p() as f64);
    // Both data blocks are centered, so the cross term vanishes.
    Ok(frob_sq(&diff) / p + mean_gap.norm_squared())
}

/// `ε = tr(E_xx) − Σ_{i≤k} λ_i(G)`, clamped at zero when rounding drives it
/// slightly negative.
pub fn predicted_error<T: Real>(trace_xx: T, spectrum: &[T], k: usize) -> Result<T> {
    let captured = spectrum.iter().take(k).fold(T::zero(), |a, v| a + *v);
    let err = trace_xx - captured;
    if err >= T::zero() {
        Ok(err)
    } else if -err <= T::lit(NEGATIVE_ERROR_TOL) * (T::one() + trace_xx.abs()) {
        Ok(T::zero())
    } else {
        Err(Error::numerical(format!("predicted error {err:e} is negative beyond rounding (tr E_xx = {trace_xx:e})")))
    }
}

/// Error of the optimal unconstrained linear filter `E_xy·E_yy†·y`:
/// `tr(E_xx) − ‖E_xy·(E_yy^{1/2})†‖²`.
pub fn linear_filter_error<T: Real>(model: &SecondOrderModel<T>) -> Result<T> {
    let e_xx = model.block(Role::X, Role::X)?;
    let e_xy = model.block(Role::X, Role::Y)?;
    let e_yy = model.block(Role::Y, Role::Y)?;
    let root = psd_inverses(e_yy, T::zero())?.sqrt_pinv;
    Ok(trace(e_xx) - frob_sq(&(e_xy * root)))
}

fn check_k(k: usize, m: usize, n: usize) -> Result<()> {
    if k == 0 || k > m.min(n) {
        return Err(Error::invalid(format!("rank budget k={k} outside [1, min(m, n)] = [1, {}]", m.min(n))));
    }
    Ok(())
}

fn check_model_matches(model: &SecondOrderModel<impl Real>, samples: &SampleSet<impl Real>) -> Result<()> {
    if let (stats::ModelSource::Sampled { p }, Some(q)) = (model.source(), samples.p()) {
        if p != q {
            return Err(Error::invalid(format!("model was built from {p} samples, sample set has {q}")));
        }
    }
    Ok(())
}

/// Leading eigen-subspace of a Gram matrix.
struct Leading<T: Real> {
    eig: SymEigen<T>,
    basis: DMatrix<T>,
    nonunique: bool,
}

fn leading<T: Real>(g: &DMatrix<T>, k: usize) -> Result<Leading<T>> {
    let eig = matcore::sym_eigen(g).map_err(|e| e.context("Gram matrix"))?;
    let nonunique = eig.split_is_degenerate(k, eig.default_tol());
    let basis = eig.leading(k);
    Ok(Leading { eig, basis, nonunique })
}

/// `U·(Uᵀ·M)`.
fn project<T: Real>(basis: &DMatrix<T>, m: &DMatrix<T>) -> DMatrix<T> {
    basis * (basis.transpose() * m)
}

/// `E_xa·E_aa†` and `G_a = E_xa·E_aa†·E_ax`.
fn gain_and_gram<T: Real>(e_xa: &DMatrix<T>, e_aa_pinv: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let gain = e_xa * e_aa_pinv;
    let gram = matcore::symmetrize(&(&gain * e_xa.transpose()));
    (gain, gram)
}

fn observation_part<T: Real>(model: &SecondOrderModel<T>) -> Result<ObservationPart<T>> {
    let e_xx = model.block(Role::X, Role::X)?;
    let e_xy = model.block(Role::X, Role::Y)?.clone();
    let e_yy = model.block(Role::Y, Role::Y)?;
    let inv = psd_inverses(e_yy, T::zero()).map_err(|e| e.context("E_yy"))?;
    let (g_xy, g_y) = gain_and_gram(&e_xy, &inv.pinv);
    Ok(ObservationPart { trace_xx: trace(e_xx), e_xy, e_yy_pinv: inv.pinv, e_yy_sqrt_pinv: inv.sqrt_pinv, g_xy, g_y })
}

struct ObservationPart<T: Real> {
    trace_xx: T,
    e_xy: DMatrix<T>,
    e_yy_pinv: DMatrix<T>,
    e_yy_sqrt_pinv: DMatrix<T>,
    g_xy: DMatrix<T>,
    g_y: DMatrix<T>,
}

/// Statistics of the decorrelated `w`-injection.
struct InjectionPart<T: Real> {
    gain_wy: DMatrix<T>,
    e_xs: DMatrix<T>,
    e_ss: DMatrix<T>,
    /// Scale of `E_ww`, the floor for the rank cutoff of `E_ss`.
    reference: T,
    s: Option<SampleMatrix<T>>,
}

fn injection_part<T: Real>(
    model: &SecondOrderModel<T>,
    samples: Option<&SampleSet<T>>,
    obs: &ObservationPart<T>,
) -> Result<InjectionPart<T>> {
    let e_wy = model.block(Role::W, Role::Y)?;
    let e_ww = model.block(Role::W, Role::W)?;
    let gain_wy = e_wy * &obs.e_yy_pinv;
    let reference = frob(e_ww);
    let from_samples = samples.and_then(|set| Some((set.get(Role::X)?, set.get(Role::Y)?, set.get(Role::W)?)));
    match from_samples {
        Some((x, y, w)) => {
            let s = stats::subtract_projection(w, &gain_wy, y, Role::S);
            let e_xs = cross_cov(x, &s)?;
            let e_ss = matcore::symmetrize(&cross_cov(&s, &s)?);
            Ok(InjectionPart { gain_wy, e_xs, e_ss, reference, s: Some(s) })
        }
        None => {
            let e_xw = model.block(Role::X, Role::W)?;
            let e_yw = model.block(Role::Y, Role::W)?;
            let e_yy = model.block(Role::Y, Role::Y)?;
            let e_xs = e_xw - &obs.e_xy * gain_wy.transpose();
            let cross = &gain_wy * e_yw;
            let e_ss =
                matcore::symmetrize(&(e_ww - &cross - cross.transpose() + &gain_wy * e_yy * gain_wy.transpose()));
            Ok(InjectionPart { gain_wy, e_xs, e_ss, reference, s: None })
        }
    }
}

/// `G_y`, `G_s` and `G_z = G_y + G_s` of the three-term PCA.
#[derive(Debug, Clone)]
pub struct Grams<T: Real> {
    pub g_y: DMatrix<T>,
    pub g_s: DMatrix<T>,
    pub g_z: DMatrix<T>,
}

/// Gram matrices of the basic three-term PCA for a model over `{x, y, w}`.
/// Uses the samples when they are supplied, the model blocks otherwise.
pub fn pca3_grams<T: Real>(model: &SecondOrderModel<T>, samples: Option<&SampleSet<T>>) -> Result<Grams<T>> {
    let obs = observation_part(model)?;
    let inj = injection_part(model, samples, &obs)?;
    let inv = psd_inverses(&inj.e_ss, inj.reference)?;
    let (_, g_s) = gain_and_gram(&inj.e_xs, &inv.pinv);
    let g_z = &obs.g_y + &g_s;
    Ok(Grams { g_y: obs.g_y, g_s, g_z })
}

fn rank_k_from_gram<T: Real>(
    method: Method,
    obs: &ObservationPart<T>,
    g_z: &DMatrix<T>,
    g_xr: &DMatrix<T>,
    k: usize,
    second: SecondTerm<T>,
    model: &SecondOrderModel<T>,
) -> Result<RankKTransform<T>> {
    let lead = leading(g_z, k)?;
    let predicted_err = predicted_error(obs.trace_xx, &lead.eig.values, k)?;
    Ok(RankKTransform {
        method,
        t0: project(&lead.basis, &obs.g_xy),
        t1: project(&lead.basis, g_xr),
        k: Some(k),
        predicted_err,
        nonunique: lead.nonunique,
        basis: Some(lead.basis),
        spectrum: lead.eig.values,
        second,
        x_mean: model.mean(Role::X),
        y_mean: model.mean(Role::Y),
        training: TrainingAux::default(),
    })
}

/// GBT1: `T0 = U_k·U_kᵀ·E_xy·E_yy†` with `U_k` from `G_y`.
pub fn fit_gbt1<T: Real>(model: &SecondOrderModel<T>, k: usize) -> Result<RankKTransform<T>> {
    let (m, n) = (model.require_dim(Role::X)?, model.require_dim(Role::Y)?);
    check_k(k, m, n)?;
    let obs = observation_part(model)?;
    let empty = DMatrix::zeros(m, 0);
    rank_k_from_gram(Method::Gbt1, &obs, &obs.g_y.clone(), &empty, k, SecondTerm::None, model)
}

/// GBT2 on `q = [y; v]`: `[T0 T1] = U_k·U_kᵀ·E_xq·E_qq†` with `U_k` from
/// `G_q`. `samples`, when given, supply the training `v` kept for reuse.
pub fn fit_gbt2<T: Real>(
    model: &SecondOrderModel<T>,
    samples: Option<&SampleSet<T>>,
    k: usize,
) -> Result<RankKTransform<T>> {
    let (m, n) = (model.require_dim(Role::X)?, model.require_dim(Role::Y)?);
    check_k(k, m, n)?;
    let nv = model.require_dim(Role::V)?;
    if nv != n {
        return Err(Error::invalid(format!("GBT2 auxiliary vector has dimension {nv}, expected n = {n}")));
    }
    let e_xx = model.block(Role::X, Role::X)?;
    let e_qq = matcore::blkdiag(model.block(Role::Y, Role::Y)?, model.block(Role::V, Role::V)?);
    let mut e_qq = e_qq;
    e_qq.view_mut((0, n), (n, n)).copy_from(model.block(Role::Y, Role::V)?);
    e_qq.view_mut((n, 0), (n, n)).copy_from(model.block(Role::V, Role::Y)?);
    let e_xq = matcore::hstack(model.block(Role::X, Role::Y)?, model.block(Role::X, Role::V)?);
    let inv = psd_inverses(&e_qq, T::zero()).map_err(|e| e.context("E_qq"))?;
    let (g_xq, g_q) = gain_and_gram(&e_xq, &inv.pinv);
    let lead = leading(&g_q, k)?;
    let predicted_err = predicted_error(trace(e_xx), &lead.eig.values, k)?;
    let t = project(&lead.basis, &g_xq);
    let t0 = t.columns(0, n).into_owned();
    let t1 = t.columns(n, n).into_owned();
    if let Some(set) = samples {
        check_model_matches(model, set)?;
    }
    Ok(RankKTransform {
        method: Method::Gbt2,
        t0,
        t1,
        k: Some(k),
        predicted_err,
        nonunique: lead.nonunique,
        basis: Some(lead.basis),
        spectrum: lead.eig.values,
        second: SecondTerm::Auxiliary { mean: model.mean(Role::V) },
        x_mean: model.mean(Role::X),
        y_mean: model.mean(Role::Y),
        training: TrainingAux::default(),
    }
    .with_training(samples, Some(Role::V), None))
}

/// GKLT on `[y; y∘y]`, solved through the truncated SVD of
/// `Q = E_xq·(E_qq^{1/2})†`: `[K1 K2] = [Q]_k·(E_qq^{1/2})†`.
///
/// This is a different factorization from the Gram-eigenvector route of the
/// other fits and costs an `m × 2n` SVD on top of the `2n × 2n`
/// eigen-decomposition; the resulting estimator is the same.
pub fn fit_gklt<T: Real>(model: &SecondOrderModel<T>, samples: &SampleSet<T>, k: usize) -> Result<RankKTransform<T>> {
    let (m, n) = (model.require_dim(Role::X)?, model.require_dim(Role::Y)?);
    check_k(k, m, n)?;
    check_model_matches(model, samples)?;
    let x = samples.require(Role::X)?;
    let y = samples.require(Role::Y)?;
    let ysq = match samples.get(Role::Ysq) {
        Some(s) => s.clone(),
        None => stats::hadamard_square(y)?,
    };
    let q = y.stack(&ysq, Role::V)?;
    let e_qq = matcore::symmetrize(&cross_cov(&q, &q)?);
    let e_xq = cross_cov(x, &q)?;
    let root = psd_inverses(&e_qq, T::zero()).map_err(|e| e.context("E_qq"))?.sqrt_pinv;
    let qm = &e_xq * &root;
    let svd = matcore::thin_svd(&qm)?;
    let energies: Vec<T> = svd.sigma.iter().map(|s| *s * *s).collect();
    let predicted_err = predicted_error(trace(model.block(Role::X, Role::X)?), &energies, k)?;
    let sigma_max = svd.sigma.first().copied().unwrap_or_else(T::zero);
    let tol = matcore::RankTolerance::Default.resolve(qm.nrows(), qm.ncols(), sigma_max);
    let nonunique = k < svd.sigma.len() && (svd.sigma[k - 1] - svd.sigma[k]).abs() <= tol;
    let basis = svd.u.columns(0, k).into_owned();
    let mut us = basis.clone();
    for j in 0..k {
        us.column_mut(j).scale_mut(svd.sigma[j]);
    }
    let t = us * svd.v.columns(0, k).transpose() * root;
    let mut spectrum = energies;
    spectrum.resize(m, T::zero());
    Ok(RankKTransform {
        method: Method::Gklt,
        t0: t.columns(0, n).into_owned(),
        t1: t.columns(n, n).into_owned(),
        k: Some(k),
        predicted_err,
        nonunique,
        basis: Some(basis),
        spectrum,
        second: SecondTerm::Square { mean: ysq.mean.clone() },
        x_mean: model.mean(Role::X),
        y_mean: model.mean(Role::Y),
        training: TrainingAux::default(),
    })
}

/// Basic three-term PCA: `T0 = U_k·U_kᵀ·G_xy`, `T1 = U_k·U_kᵀ·G_xs` with
/// `U_k` from `G_z = G_y + G_s`.
///
/// With samples (`x`, `y`, `w`) the injection statistics come from the
/// `s`-samples; without, from the model blocks.
pub fn fit_pca3<T: Real>(
    model: &SecondOrderModel<T>,
    samples: Option<&SampleSet<T>>,
    k: usize,
) -> Result<RankKTransform<T>> {
    let (m, n) = (model.require_dim(Role::X)?, model.require_dim(Role::Y)?);
    check_k(k, m, n)?;
    if let Some(set) = samples {
        check_model_matches(model, set)?;
    }
    let obs = observation_part(model)?;
    let inj = injection_part(model, samples, &obs)?;
    let inv = psd_inverses(&inj.e_ss, inj.reference).map_err(|e| e.context("E_ss"))?;
    let (g_xs, g_s) = gain_and_gram(&inj.e_xs, &inv.pinv);
    let g_z = &obs.g_y + &g_s;
    let second = SecondTerm::Injection { w_mean: model.mean(Role::W), gain_wy: inj.gain_wy, ext: None };
    Ok(rank_k_from_gram(Method::Pca3, &obs, &g_z, &g_xs, k, second, model)?.with_training(samples, Some(Role::W), None))
}

/// Extended three-term PCA on `s̃ = [s; g]`, `g = h − E_hz·E_zz†·z`. The
/// `h`-injection dimension `η` is the dimension of the `h` samples (zero
/// when absent, which reproduces [`fit_pca3`]).
pub fn fit_pca3_ext<T: Real>(
    model: &SecondOrderModel<T>,
    samples: &SampleSet<T>,
    k: usize,
) -> Result<RankKTransform<T>> {
    let (m, n) = (model.require_dim(Role::X)?, model.require_dim(Role::Y)?);
    check_k(k, m, n)?;
    check_model_matches(model, samples)?;
    let x = samples.require(Role::X)?;
    let y = samples.require(Role::Y)?;
    samples.require(Role::W)?;
    let obs = observation_part(model)?;
    let inj = injection_part(model, Some(samples), &obs)?;
    let s = inj.s.clone().expect("sample route");
    let s_inv = psd_inverses(&inj.e_ss, inj.reference).map_err(|e| e.context("E_ss"))?;

    let (gain_hz, g, h_reference, h_mean) = match samples.get(Role::H) {
        Some(h) if h.dim() > 0 => {
            // E_zz is block diagonal, so E_zz† = blkdiag(E_yy†, E_ss†).
            let gain_hy = cross_cov(h, y)? * &obs.e_yy_pinv;
            let gain_hs = cross_cov(h, &s)? * &s_inv.pinv;
            let gain_hz = matcore::hstack(&gain_hy, &gain_hs);
            let z = y.stack(&s, Role::S)?;
            let g = stats::subtract_projection(h, &gain_hz, &z, Role::G);
            let h_ref = frob(&cross_cov(h, h)?);
            (Some(gain_hz), Some(g), h_ref, h.mean.clone())
        }
        _ => (None, None, T::zero(), DVector::zeros(0)),
    };
    let s_tilde = match &g {
        Some(g) => s.stack(g, Role::S)?,
        None => s,
    };
    let e_xst = cross_cov(x, &s_tilde)?;
    let e_stst = matcore::symmetrize(&cross_cov(&s_tilde, &s_tilde)?);
    let inv = psd_inverses(&e_stst, inj.reference + h_reference).map_err(|e| e.context("E_s̃s̃"))?;
    let (g_xst, g_st) = gain_and_gram(&e_xst, &inv.pinv);
    let g_z = &obs.g_y + &g_st;
    let ext = gain_hz.map(|gain_hz| Extension { h_mean, gain_hz });
    let second = SecondTerm::Injection { w_mean: model.mean(Role::W), gain_wy: inj.gain_wy, ext };
    Ok(rank_k_from_gram(Method::Pca3Ext, &obs, &g_z, &g_xst, k, second, model)?.with_training(
        Some(samples),
        Some(Role::W),
        Some(Role::H),
    ))
}

/// Three-term filter: `A0 = E_xy·E_yy†`, `A1 = E_xs·E_ss†`, no rank
/// constraint. Without a `w` role it degenerates to the linear filter.
pub fn fit_ttf<T: Real>(model: &SecondOrderModel<T>, samples: Option<&SampleSet<T>>) -> Result<RankKTransform<T>> {
    let m = model.require_dim(Role::X)?;
    model.require_dim(Role::Y)?;
    if let Some(set) = samples {
        check_model_matches(model, set)?;
    }
    let obs = observation_part(model)?;
    let y_energy = frob_sq(&(&obs.e_xy * &obs.e_yy_sqrt_pinv));
    let (t1, s_energy, second) = if model.dim(Role::W).is_some() {
        let inj = injection_part(model, samples, &obs)?;
        let inv = psd_inverses(&inj.e_ss, inj.reference).map_err(|e| e.context("E_ss"))?;
        let a1 = &inj.e_xs * &inv.pinv;
        let energy = frob_sq(&(&inj.e_xs * &inv.sqrt_pinv));
        let second = SecondTerm::Injection { w_mean: model.mean(Role::W), gain_wy: inj.gain_wy, ext: None };
        (a1, energy, second)
    } else {
        (DMatrix::zeros(m, 0), T::zero(), SecondTerm::None)
    };
    let predicted_err = predicted_error(obs.trace_xx, &[y_energy + s_energy], 1)?;
    Ok(RankKTransform {
        method: Method::Ttf,
        t0: obs.g_xy,
        t1,
        k: None,
        predicted_err,
        nonunique: false,
        basis: None,
        spectrum: Vec::new(),
        second,
        x_mean: model.mean(Role::X),
        y_mean: model.mean(Role::Y),
        training: TrainingAux::default(),
    }
    .with_training(samples, Some(Role::W), None))
}

/// Fits `method`. `samples` are required for `gklt` and `pca3_ext`; `k` is
/// ignored by `ttf`.
pub fn fit<T: Real>(
    method: Method,
    model: &SecondOrderModel<T>,
    samples: Option<&SampleSet<T>>,
    k: usize,
) -> Result<RankKTransform<T>> {
    let need = |what: Method| samples.ok_or_else(|| Error::invalid(format!("{what} needs samples")));
    match method {
        Method::Gbt1 => fit_gbt1(model, k),
        Method::Gbt2 => fit_gbt2(model, samples, k),
        Method::Gklt => fit_gklt(model, need(method)?, k),
        Method::Pca3 => fit_pca3(model, samples, k),
        Method::Pca3Ext => fit_pca3_ext(model, need(method)?, k),
        Method::Ttf => fit_ttf(model, samples),
    }
}

/// Convenience: fit on a sample set and return the training-set error
/// alongside the transform.
pub fn fit_and_score<T: Real>(method: Method, samples: &SampleSet<T>, k: usize) -> Result<(RankKTransform<T>, T)> {
    let model = samples.model()?;
    let t = fit(method, &model, Some(samples), k)?;
    let x = samples.require(Role::X)?;
    let x_hat = t.apply(samples.require(Role::Y)?, true)?;
    let err = reconstruction_error(x, &x_hat)?;
    Ok((t, err))
}
