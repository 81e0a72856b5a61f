//! Independent checks for the closed-form fits: a brute-force rank-`k`
//! least-squares minimizer and a Monte-Carlo error estimate. Nothing in the
//! fitting path calls into this module.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::matcore::{frob_sq, pseudo_inverse, RankTolerance};
use crate::stats::{LinearModel, SampleMatrix};
use crate::transforms::{reconstruction_error, RankKTransform};
use crate::{Error, Real, Result};

/// Relative decrease of the objective below which ALS stops.
pub const ALS_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct OracleResult<T: Real> {
    pub best_err: T,
    pub restarts: usize,
    /// Whether the best restart met the stopping rule before `iters`.
    pub converged: bool,
    pub per_restart_errs: Vec<T>,
}

fn objective<T: Real>(x: &DMatrix<T>, fitted: &DMatrix<T>) -> T {
    frob_sq(&(x - fitted)) / T::lit(x.ncols() as f64)
}

fn restart_seed(seed: u64, r: usize) -> u64 {
    seed ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Minimizes `(1/p)·‖X − L·R·Z‖_F²` over `L` (`m × k`) and `R` (`k × d`) by
/// alternating exact least-squares solves, keeping the best of `restarts`
/// random starts.
pub fn als_rank_k<T: Real>(
    x: &DMatrix<T>,
    z: &DMatrix<T>,
    k: usize,
    restarts: usize,
    iters: usize,
    seed: u64,
) -> Result<OracleResult<T>> {
    let (m, p) = x.shape();
    let d = z.nrows();
    if z.ncols() != p {
        return Err(Error::invalid(format!("X has {p} samples, Z has {}", z.ncols())));
    }
    if k == 0 || k > m.min(d) || restarts == 0 {
        return Err(Error::invalid(format!(
            "need 1 ≤ k ≤ min(m, d) = {} and restarts ≥ 1 (got k={k}, restarts={restarts})",
            m.min(d)
        )));
    }
    let z_pinv = pseudo_inverse(z, RankTolerance::Default)?;
    let runs: Vec<(T, bool)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(seed, r));
            let mut right = DMatrix::<T>::from_fn(k, d, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
            let mut prev = T::max_value().expect("bounded type");
            let mut best = prev;
            let mut converged = false;
            for _ in 0..iters {
                let rz = &right * z;
                let left = x * pseudo_inverse(&rz, RankTolerance::Default)?;
                right = pseudo_inverse(&left, RankTolerance::Default)? * x * &z_pinv;
                let err = objective(x, &(&left * &right * z));
                best = best.min(err);
                let drop = prev - err;
                prev = err;
                if drop <= T::lit(ALS_REL_TOL) * err {
                    converged = true;
                    break;
                }
            }
            Ok((best, converged))
        })
        .collect::<Result<_>>()?;
    let (best_idx, _) = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).expect("finite objective"))
        .expect("restarts ≥ 1");
    Ok(OracleResult {
        best_err: runs[best_idx].0,
        restarts,
        converged: runs[best_idx].1,
        per_restart_errs: runs.iter().map(|r| r.0).collect(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct MonteCarloResult {
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
}

/// Mean and standard error of `(1/p)·‖X − X̂‖_F²` over `trials` datasets of
/// `p` samples drawn from `generator`, where `estimate` maps `(y, trial
/// seed)` to `x̂`.
pub fn monte_carlo_with<T, F>(
    generator: &LinearModel<T>,
    p: usize,
    trials: usize,
    seed: u64,
    estimate: F,
) -> Result<MonteCarloResult>
where
    T: Real,
    F: Fn(&SampleMatrix<T>, u64) -> Result<SampleMatrix<T>> + Sync,
{
    if trials == 0 || p == 0 {
        return Err(Error::invalid("Monte-Carlo run needs trials ≥ 1 and p ≥ 1"));
    }
    let errs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = restart_seed(seed, t);
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
            let (x, y) = generator.sample(p, &mut rng)?;
            let x_hat = estimate(&y, trial_seed)?;
            Ok(reconstruction_error(&x, &x_hat)?.as_f64())
        })
        .collect::<Result<_>>()?;
    let n = trials as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = if trials > 1 { errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(MonteCarloResult { mean, std_err: (var / n).sqrt(), trials })
}

/// [`monte_carlo_with`] for a fitted transform, drawing fresh injections in
/// every trial.
pub fn monte_carlo_error<T: Real>(
    t: &RankKTransform<T>,
    generator: &LinearModel<T>,
    p: usize,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloResult> {
    monte_carlo_with(generator, p, trials, seed, |y, s| t.apply_fresh(y, s))
}
