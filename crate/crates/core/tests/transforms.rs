mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use tpca::matcore::{frob, numerical_rank};
use tpca::oracle::{als_rank_k, monte_carlo_error};
use tpca::stats::{center, cross_cov, LinearModel};
use tpca::transforms::{
    fit, fit_gbt1, fit_gbt2, fit_gklt, fit_pca3, fit_pca3_ext, fit_ttf, linear_filter_error, predicted_error,
};
use tpca::{Dist, Error, InjectionSpec, Method, Role, SampleSet, SecondOrderModel};

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

/// `y = x` with `E_xx = e`.
fn identity_model(e: DMatrix<f64>) -> SecondOrderModel {
    SecondOrderModel::analytic()
        .with_block(Role::X, Role::X, e.clone())
        .unwrap()
        .with_block(Role::X, Role::Y, e.clone())
        .unwrap()
        .with_block(Role::Y, Role::Y, e)
        .unwrap()
}

fn small_shape() -> Shape {
    Shape { m: 5, n: 4, ell: 3, eta: 2, p: 120, sigma: 0.7 }
}

#[test]
fn gbt1_on_diagonal_identity_model() {
    let model = identity_model(diag(&[4.0, 1.0]));
    let t = fit_gbt1(&model, 1).unwrap();
    assert!((t.predicted_err() - 1.0).abs() <= 1e-12);
    let t = fit_gbt1(&model, 2).unwrap();
    assert!(t.predicted_err().abs() <= 1e-12);
    assert!(matches!(fit_gbt1(&model, 0), Err(Error::InvalidInput(_))));
    assert!(matches!(fit_gbt1(&model, 3), Err(Error::InvalidInput(_))));
}

#[test]
fn ttf_on_full_rank_identity_model_is_exact() {
    let model = identity_model(diag(&[2.0, 3.0, 0.5]));
    let t = fit_ttf(&model, None).unwrap();
    assert!(t.predicted_err().abs() <= 1e-12);
    assert_eq!(t.k(), None);
}

#[test]
fn nothing_recoverable_gives_trace() {
    // x independent of y and w in the model.
    let model = SecondOrderModel::analytic()
        .with_block(Role::X, Role::X, diag(&[1.0, 2.0, 3.0]))
        .unwrap()
        .with_block(Role::Y, Role::Y, diag(&[1.0, 1.0]))
        .unwrap()
        .with_block(Role::X, Role::Y, DMatrix::zeros(3, 2))
        .unwrap()
        .with_block(Role::W, Role::W, diag(&[0.5, 0.5]))
        .unwrap()
        .with_block(Role::W, Role::Y, DMatrix::zeros(2, 2))
        .unwrap()
        .with_block(Role::X, Role::W, DMatrix::zeros(3, 2))
        .unwrap();
    for k in 1..=2 {
        assert!((fit_gbt1(&model, k).unwrap().predicted_err() - 6.0).abs() <= 1e-12);
        assert!((fit_pca3(&model, None, k).unwrap().predicted_err() - 6.0).abs() <= 1e-12);
    }
}

#[test]
fn analytic_independent_injection_collapses_to_gbt1() {
    let set = instance(&small_shape(), 3);
    let sampled = set.model().unwrap();
    let mut model = SecondOrderModel::analytic();
    for (a, b) in [(Role::X, Role::X), (Role::X, Role::Y), (Role::Y, Role::Y)] {
        model = model.with_block(a, b, sampled.block(a, b).unwrap().clone()).unwrap();
    }
    model = model
        .with_block(Role::W, Role::W, DMatrix::identity(3, 3) / 12.0)
        .unwrap()
        .with_block(Role::W, Role::Y, DMatrix::zeros(3, 4))
        .unwrap()
        .with_block(Role::X, Role::W, DMatrix::zeros(5, 3))
        .unwrap();
    for k in 1..=4 {
        let p3 = fit_pca3(&model, None, k).unwrap();
        let g1 = fit_gbt1(&model, k).unwrap();
        assert!(frob(p3.t1()) <= 1e-12);
        assert!((p3.t0() - g1.t0()).norm() <= 1e-10 * (1.0 + g1.t0().norm()));
        assert!(close(p3.predicted_err(), g1.predicted_err(), 1e-12, 1e-14));
    }
}

#[test]
fn gbt2_with_uncorrelated_v_reduces_to_gbt1() {
    let set = instance(&small_shape(), 4);
    let sampled = set.model().unwrap();
    let mut model = SecondOrderModel::analytic();
    for (a, b) in [(Role::X, Role::X), (Role::X, Role::Y), (Role::Y, Role::Y)] {
        model = model.with_block(a, b, sampled.block(a, b).unwrap().clone()).unwrap();
    }
    model = model
        .with_block(Role::V, Role::V, DMatrix::identity(4, 4))
        .unwrap()
        .with_block(Role::V, Role::Y, DMatrix::zeros(4, 4))
        .unwrap()
        .with_block(Role::X, Role::V, DMatrix::zeros(5, 4))
        .unwrap();
    for k in 1..=4 {
        let g2 = fit_gbt2(&model, None, k).unwrap();
        let g1 = fit_gbt1(&model, k).unwrap();
        assert!(close(g2.predicted_err(), g1.predicted_err(), 1e-10, 1e-12));
        assert!(frob(g2.t1()) <= 1e-10);
    }
}

#[test]
fn gbt2_rejects_auxiliary_of_wrong_dimension() {
    let shape = small_shape();
    let (x, y) = signal(&shape, 5);
    let set = SampleSet::new()
        .with(x)
        .unwrap()
        .with(y)
        .unwrap()
        .with_injection(Role::V, InjectionSpec::new(shape.n + 1, Dist::Uniform, 1))
        .unwrap();
    let err = fit_gbt2(&set.model().unwrap(), Some(&set), 2).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)), "{err}");
}

#[test]
fn gklt_with_sign_observations_equals_gbt1() {
    // y entries in {-1, +1}: y² is constant, so its centered part vanishes.
    let mut r = rng(8);
    let p = 200;
    let x_raw = gaussian(3, p, &mut r);
    let y_raw = x_raw.rows(0, 3).map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
    let set =
        SampleSet::new().with(center(x_raw, Role::X).unwrap()).unwrap().with(center(y_raw, Role::Y).unwrap()).unwrap();
    let model = set.model().unwrap();
    for k in 1..=3 {
        let gk = fit_gklt(&model, &set, k).unwrap();
        let g1 = fit_gbt1(&model, k).unwrap();
        assert!(close(gk.predicted_err(), g1.predicted_err(), 1e-9, 1e-12));
        assert!((gk.t0() - g1.t0()).norm() <= 1e-8 * (1.0 + g1.t0().norm()));
        assert!(frob(gk.t1()) <= 1e-8);
    }
}

#[test]
fn rank_certificate_and_monotone_in_k() {
    let set = instance(&small_shape(), 6);
    let model = set.model().unwrap();
    for method in [Method::Gbt1, Method::Gbt2, Method::Gklt, Method::Pca3, Method::Pca3Ext] {
        let mut prev = f64::INFINITY;
        for k in 1..=4 {
            let t = fit(method, &model, Some(&set), k).unwrap();
            assert!(t.rank_certificate().unwrap() <= k, "{method} k={k}");
            assert!(numerical_rank(&t.stacked()).unwrap() <= k);
            assert!(t.predicted_err() <= prev + 1e-10, "{method} not monotone at k={k}");
            prev = t.predicted_err();
        }
    }
}

#[test]
fn pca3_ext_without_h_matches_pca3() {
    let shape = Shape { eta: 0, ..small_shape() };
    let set = instance(&shape, 7);
    let model = set.model().unwrap();
    for k in 1..=4 {
        let a = fit_pca3_ext(&model, &set, k).unwrap();
        let b = fit_pca3(&model, Some(&set), k).unwrap();
        assert!(close(a.predicted_err(), b.predicted_err(), 1e-12, 1e-14));
        assert!((a.stacked() - b.stacked()).norm() <= 1e-10 * (1.0 + b.stacked().norm()));
    }
}

#[test]
fn noiseless_full_budget_ext_is_exact() {
    let mut r = rng(9);
    let x_raw = gaussian(4, 80, &mut r);
    let x = center(x_raw.clone(), Role::X).unwrap();
    let y = center(x_raw, Role::Y).unwrap();
    let set = SampleSet::new()
        .with(x)
        .unwrap()
        .with(y)
        .unwrap()
        .with_injection(Role::W, InjectionSpec::new(4, Dist::Uniform, 1))
        .unwrap()
        .with_injection(Role::H, InjectionSpec::new(3, Dist::Uniform, 2))
        .unwrap();
    let t = fit_pca3_ext(&set.model().unwrap(), &set, 4).unwrap();
    assert!(t.predicted_err() <= 1e-9, "{}", t.predicted_err());
}

#[test]
fn optimal_estimate_as_injection_is_useless() {
    let shape = small_shape();
    let (x, y) = signal(&shape, 10);
    let base = SampleSet::new().with(x).unwrap().with(y.clone()).unwrap();
    let m0 = base.model().unwrap();
    let t = fit_ttf(&m0, None).unwrap();
    let w_raw = t.t0() * &y.data;
    let set = base.with(center(w_raw, Role::W).unwrap()).unwrap();
    let model = set.model().unwrap();
    for k in 1..=4 {
        let p3 = fit_pca3(&model, Some(&set), k).unwrap();
        assert!(frob(p3.t1()) <= 1e-10, "k={k}: {}", frob(p3.t1()));
    }
}

#[test]
fn ttf_filter_identity() {
    let set = instance(&small_shape(), 11);
    let model = set.model().unwrap();
    let t = fit_ttf(&model, Some(&set)).unwrap();
    let lf = linear_filter_error(&model).unwrap();
    // Independent route: A1 from an explicit least-squares fit of x on s.
    let x = set.require(Role::X).unwrap();
    let y = set.require(Role::Y).unwrap();
    let w = set.require(Role::W).unwrap();
    let e_yy = cross_cov(y, y).unwrap();
    let s = tpca::stats::s_injection(y, w, &cross_cov(w, y).unwrap(), &e_yy).unwrap();
    let a1 = x.data.clone() * tpca::matcore::pseudo_inverse(&s.data, Default::default()).unwrap();
    let gain = frob(&(&a1 * &s.data)).powi(2) / x.p() as f64;
    assert!(close(t.predicted_err(), lf - gain, 1e-9, 1e-12), "{} vs {}", t.predicted_err(), lf - gain);
    assert!(close(t.predicted_err(), empirical(&t, &set), 1e-8, 1e-12));
    assert!(matches!(t.principal_components(y), Err(Error::InvalidInput(_))));
}

#[test]
fn principal_components_reconstruct_apply() {
    let set = instance(&small_shape(), 12);
    let model = set.model().unwrap();
    let y = set.require(Role::Y).unwrap();
    for method in [Method::Gbt1, Method::Gbt2, Method::Gklt, Method::Pca3, Method::Pca3Ext] {
        let t = fit(method, &model, Some(&set), 1).unwrap();
        let pcs = t.principal_components(y).unwrap();
        assert_eq!(pcs.scores.shape(), (1, y.p()));
        let t = fit(method, &model, Some(&set), 3).unwrap();
        let pcs = t.principal_components(y).unwrap();
        let gram = pcs.basis.transpose() * &pcs.basis;
        assert!((gram - DMatrix::identity(3, 3)).norm() <= 1e-9, "{method}");
        let applied = t.apply(y, true).unwrap().raw();
        assert!((pcs.reconstruct() - &applied).norm() <= 1e-9 * (1.0 + applied.norm()), "{method}");
    }
}

#[test]
fn training_identity_and_als_agreement() {
    let shape = Shape { m: 4, n: 4, ell: 3, eta: 2, p: 150, sigma: 0.5 };
    let set = instance(&shape, 13);
    let model = set.model().unwrap();
    let x = set.require(Role::X).unwrap();
    let y = set.require(Role::Y).unwrap();
    let k = 2;
    let t = fit_pca3(&model, Some(&set), k).unwrap();
    assert!(close(t.predicted_err(), empirical(&t, &set), 1e-8, 1e-12));
    let w = set.require(Role::W).unwrap();
    let s = tpca::stats::s_injection(y, w, &cross_cov(w, y).unwrap(), &cross_cov(y, y).unwrap()).unwrap();
    let z = tpca::matcore::vstack(&y.data, &s.data);
    let als = als_rank_k(&x.data, &z, k, 20, 500, 1).unwrap();
    assert!(als.best_err >= t.predicted_err() - 1e-9);
    assert!(als.best_err <= t.predicted_err() * (1.0 + 1e-4));

    let t = fit_gklt(&model, &set, k).unwrap();
    let ysq = tpca::stats::hadamard_square(y).unwrap();
    let z = tpca::matcore::vstack(&y.data, &ysq.data);
    let als = als_rank_k(&x.data, &z, k, 20, 500, 2).unwrap();
    assert!(als.best_err >= t.predicted_err() - 1e-9);
    assert!(als.best_err <= t.predicted_err() * (1.0 + 1e-4));
}

#[test]
fn reusing_injections_needs_training_sample_count() {
    let set = instance(&small_shape(), 14);
    let t = fit_pca3(&set.model().unwrap(), Some(&set), 2).unwrap();
    let y = set.require(Role::Y).unwrap();
    let short = center(y.raw().columns(0, 10).into_owned(), Role::Y).unwrap();
    assert!(matches!(t.apply(&short, true), Err(Error::InvalidInput(_))));
    assert_eq!(t.apply(&short, false).unwrap().p(), 10);
}

#[test]
fn fresh_injections_bring_no_gain() {
    let gen = LinearModel::<f64>::new(6, 0.8, 21);
    let p = 300;
    let mut r = rng(22);
    let (x, y) = gen.sample(p, &mut r).unwrap();
    let set = SampleSet::new()
        .with(x)
        .unwrap()
        .with(y)
        .unwrap()
        .with_injection(Role::W, InjectionSpec::new(6, Dist::Uniform, 23))
        .unwrap();
    let model = set.model().unwrap();
    let k = 3;
    let p3 = fit_pca3(&model, Some(&set), k).unwrap();
    let g1 = fit_gbt1(&model, k).unwrap();
    assert!(p3.predicted_err() < g1.predicted_err());
    let mc_p3 = monte_carlo_error(&p3, &gen, p, 40, 5).unwrap();
    let mc_g1 = monte_carlo_error(&g1, &gen, p, 40, 5).unwrap();
    // Fresh s is independent of fresh x: no in-sample gain survives.
    assert!(mc_p3.mean >= g1.predicted_err() - 1e-9);
    assert!(mc_p3.mean >= mc_g1.mean - 3.0 * (mc_p3.std_err + mc_g1.std_err));
}

#[test]
fn predicted_error_clamps_rounding_only() {
    assert_eq!(predicted_error(1.0, &[1.0 + 1e-12], 1).unwrap(), 0.0);
    assert!(matches!(predicted_error(1.0, &[1.1], 1), Err(Error::Numerical(_))));
    assert_eq!(predicted_error(3.0, &[2.0, 0.5], 1).unwrap(), 1.0);
}

#[test]
fn single_precision_fit_tracks_double() {
    let set = instance(&small_shape(), 15);
    let model = set.model().unwrap();
    let t64 = fit_pca3(&model, Some(&set), 2).unwrap();
    let to32 = |r: Role| {
        let sm = set.require(r).unwrap();
        center(sm.raw().map(|v| v as f32), r).unwrap()
    };
    let set32 =
        tpca::SampleSet32::new().with(to32(Role::X)).unwrap().with(to32(Role::Y)).unwrap().with(to32(Role::W)).unwrap();
    let t32 = fit_pca3(&set32.model().unwrap(), Some(&set32), 2).unwrap();
    assert!(close(t32.predicted_err() as f64, t64.predicted_err(), 1e-3, 1e-5));
}
