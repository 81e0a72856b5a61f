#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tpca::matcore::frob;
use tpca::stats::{center, cross_cov, h_extension, s_injection, Dist, InjectionSpec, Role};
use tpca::transforms::{reconstruction_error, RankKTransform};
use tpca::{SampleMatrix, SampleSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Shape of a random instance.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub m: usize,
    pub n: usize,
    pub ell: usize,
    pub eta: usize,
    pub p: usize,
    pub sigma: f64,
}

impl Shape {
    /// m, n in [lo, hi], ell in [1, ell_hi], eta in [1, eta_hi], p = 20m.
    pub fn random(r: &mut ChaCha8Rng, lo: usize, hi: usize, ell_hi: usize, eta_hi: usize) -> Shape {
        let m = r.random_range(lo..=hi);
        Shape {
            m,
            n: r.random_range(lo..=hi),
            ell: r.random_range(1..=ell_hi),
            eta: r.random_range(1..=eta_hi.max(1)),
            p: 20 * m,
            sigma: r.random_range(0.1..2.0),
        }
    }
}

/// Raw correlated `x` (offset 0.5) and `y = A·x + σ·ξ`.
pub fn signal(shape: &Shape, seed: u64) -> (SampleMatrix, SampleMatrix) {
    let mut r = rng(seed);
    let mix = gaussian(shape.m, shape.m, &mut r);
    let x_raw = mix * gaussian(shape.m, shape.p, &mut r) + DMatrix::from_element(shape.m, shape.p, 0.5);
    let a = gaussian(shape.n, shape.m, &mut r);
    let y_raw = &a * &x_raw + gaussian(shape.n, shape.p, &mut r) * shape.sigma;
    (center(x_raw, Role::X).unwrap(), center(y_raw, Role::Y).unwrap())
}

/// `x`, `y`, `w` (ℓ), `v` (n) and, when `eta > 0`, `h`.
pub fn instance(shape: &Shape, seed: u64) -> SampleSet {
    let (x, y) = signal(shape, seed);
    let mut set = SampleSet::new()
        .with(x)
        .unwrap()
        .with(y)
        .unwrap()
        .with_injection(Role::W, InjectionSpec::new(shape.ell, Dist::Uniform, seed ^ 0x11))
        .unwrap()
        .with_injection(Role::V, InjectionSpec::new(shape.n, Dist::Uniform, seed ^ 0x22))
        .unwrap();
    if shape.eta > 0 {
        set = set.with_injection(Role::H, InjectionSpec::new(shape.eta, Dist::Uniform, seed ^ 0x33)).unwrap();
    }
    set
}

/// Training-set reconstruction error with the stored injections.
pub fn empirical(t: &RankKTransform<f64>, set: &SampleSet) -> f64 {
    let x_hat = t.apply(set.require(Role::Y).unwrap(), true).unwrap();
    reconstruction_error(set.require(Role::X).unwrap(), &x_hat).unwrap()
}

pub fn trace_xx(set: &SampleSet) -> f64 {
    let x = set.require(Role::X).unwrap();
    cross_cov(x, x).unwrap().trace()
}

/// `|a − b| ≤ rel·max(|a|, |b|) + floor`.
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + floor
}

/// Largest of `‖E_ys‖`, `‖E_yg‖`, `‖E_sg‖` over `1 + ‖E_yy‖`, recomputing
/// `s` and `g` from the samples.
pub fn decorrelation_ratio(set: &SampleSet) -> f64 {
    let y = set.require(Role::Y).unwrap();
    let Some(w) = set.get(Role::W) else { return 0.0 };
    let e_yy = cross_cov(y, y).unwrap();
    let s = s_injection(y, w, &cross_cov(w, y).unwrap(), &e_yy).unwrap();
    let mut worst = frob(&cross_cov(y, &s).unwrap());
    if let Some(h) = set.get(Role::H) {
        let z = y.stack(&s, Role::S).unwrap();
        let ext = h_extension(y, &s, h, &cross_cov(h, &z).unwrap(), &cross_cov(&z, &z).unwrap()).unwrap();
        worst = worst.max(frob(&cross_cov(y, &ext.g).unwrap())).max(frob(&cross_cov(&s, &ext.g).unwrap()));
    }
    worst / (1.0 + frob(&e_yy))
}
