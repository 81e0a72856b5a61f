//! Sample matrices, cross-covariances, injections and synthetic generators.
//!
//! Samples are stored variables × samples (one column per observation).
//! Covariances use the `1/p` normalization throughout, so closed-form
//! errors computed from a model reproduce the empirical reconstruction
//! error on the very samples the model was built from.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::matcore::{self, frob};
use crate::{Error, Real, Result};

/// Role of a random vector in the estimation problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Reference signal to reconstruct.
    X,
    /// Observation.
    Y,
    /// `w`-injection.
    W,
    /// `h`-injection.
    H,
    /// Auxiliary vector of the GBT2.
    V,
    /// Hadamard square of `y`.
    #[serde(rename = "y2")]
    Ysq,
    /// Decorrelated `w`-injection.
    S,
    /// Decorrelated `h`-injection.
    G,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::X => "x",
            Role::Y => "y",
            Role::W => "w",
            Role::H => "h",
            Role::V => "v",
            Role::Ysq => "y2",
            Role::S => "s",
            Role::G => "g",
        }
    }

    pub fn parse(s: &str) -> Result<Role> {
        Ok(match s {
            "x" => Role::X,
            "y" => Role::Y,
            "w" => Role::W,
            "h" => Role::H,
            "v" => Role::V,
            "y2" => Role::Ysq,
            "s" => Role::S,
            "g" => Role::G,
            other => return Err(Error::invalid(format!("unknown role `{other}`"))),
        })
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Centered `d × p` samples of one random vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix<T: Real> {
    /// Centered samples, one column per observation.
    pub data: DMatrix<T>,
    /// The subtracted sample mean.
    pub mean: DVector<T>,
    pub role: Role,
}

impl<T: Real> SampleMatrix<T> {
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    /// Uncentered samples `data + mean·1ᵀ`.
    pub fn raw(&self) -> DMatrix<T> {
        let mut out = self.data.clone();
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        out
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Rows `range` as a new sample matrix. Centering is per-row, so a prefix
    /// of a centered matrix is itself centered.
    pub fn rows(&self, range: Range<usize>) -> SampleMatrix<T> {
        let n = range.end - range.start;
        SampleMatrix {
            data: self.data.rows(range.start, n).into_owned(),
            mean: self.mean.rows(range.start, n).into_owned(),
            role: self.role,
        }
    }

    /// Stacks `[self; other]` variable-wise.
    pub fn stack(&self, other: &SampleMatrix<T>, role: Role) -> Result<SampleMatrix<T>> {
        if self.p() != other.p() {
            return Err(Error::invalid(format!(
                "cannot stack {} ({} samples) with {} ({} samples)",
                self.role,
                self.p(),
                other.role,
                other.p()
            )));
        }
        let mut mean = DVector::zeros(self.dim() + other.dim());
        mean.rows_mut(0, self.dim()).copy_from(&self.mean);
        mean.rows_mut(self.dim(), other.dim()).copy_from(&other.mean);
        Ok(SampleMatrix { data: matcore::vstack(&self.data, &other.data), mean, role })
    }
}

/// Centers raw `d × p` samples by their sample mean.
pub fn center<T: Real>(raw: DMatrix<T>, role: Role) -> Result<SampleMatrix<T>> {
    let p = raw.ncols();
    if p == 0 {
        return Err(Error::invalid(format!("{role}: no samples")));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{role}: non-finite sample value")));
    }
    let inv_p = T::one() / T::lit(p as f64);
    let mean = raw.column_sum() * inv_p;
    let mut data = raw;
    for mut col in data.column_iter_mut() {
        col -= &mean;
    }
    Ok(SampleMatrix { data, mean, role })
}

/// `(1/p)·A·Bᵀ`.
pub fn cross_cov<T: Real>(a: &SampleMatrix<T>, b: &SampleMatrix<T>) -> Result<DMatrix<T>> {
    if a.p() != b.p() {
        return Err(Error::invalid(format!(
            "cross-covariance of {} and {}: sample counts {} and {} differ",
            a.role,
            b.role,
            a.p(),
            b.p()
        )));
    }
    let inv_p = T::one() / T::lit(a.p() as f64);
    Ok(&a.data * b.data.transpose() * inv_p)
}

/// `E_ab·E_bb†`, the gain that removes from `a` its component correlated with `b`.
pub fn decorrelating_gain<T: Real>(e_ab: &DMatrix<T>, e_bb: &DMatrix<T>) -> Result<DMatrix<T>> {
    if e_ab.ncols() != e_bb.nrows() {
        return Err(Error::invalid(format!(
            "gain: cross block has {} columns but auto block is {}x{}",
            e_ab.ncols(),
            e_bb.nrows(),
            e_bb.ncols()
        )));
    }
    Ok(e_ab * matcore::pinv_psd(e_bb)?)
}

/// `target − gain·source`, applied to centered data and means alike.
pub(crate) fn subtract_projection<T: Real>(
    target: &SampleMatrix<T>,
    gain: &DMatrix<T>,
    source: &SampleMatrix<T>,
    role: Role,
) -> SampleMatrix<T> {
    SampleMatrix { data: &target.data - gain * &source.data, mean: &target.mean - gain * &source.mean, role }
}

/// The `s`-injection `S = W − E_wy·E_yy†·Y`.
///
/// When `e_wy`, `e_yy` are the sample covariances of the same `Y`, `W`, the
/// sample cross-covariance of `y` and `s` vanishes.
pub fn s_injection<T: Real>(
    y: &SampleMatrix<T>,
    w: &SampleMatrix<T>,
    e_wy: &DMatrix<T>,
    e_yy: &DMatrix<T>,
) -> Result<SampleMatrix<T>> {
    if y.p() != w.p() {
        return Err(Error::invalid(format!("s-injection: y has {} samples, w has {}", y.p(), w.p())));
    }
    if e_wy.shape() != (w.dim(), y.dim()) || e_yy.shape() != (y.dim(), y.dim()) {
        return Err(Error::invalid(format!(
            "s-injection: E_wy is {:?}, E_yy is {:?} for dim(w)={}, dim(y)={}",
            e_wy.shape(),
            e_yy.shape(),
            w.dim(),
            y.dim()
        )));
    }
    let gain = decorrelating_gain(e_wy, e_yy)?;
    Ok(subtract_projection(w, &gain, y, Role::S))
}

/// Output of [`h_extension`].
#[derive(Debug, Clone)]
pub struct HExtension<T: Real> {
    /// `g = h − E_hz·E_zz†·z`.
    pub g: SampleMatrix<T>,
    /// Extended injection `[s; g]`.
    pub s_tilde: SampleMatrix<T>,
}

/// Decorrelates an `h`-injection from `z = [y; s]` and appends it to `s`.
pub fn h_extension<T: Real>(
    y: &SampleMatrix<T>,
    s: &SampleMatrix<T>,
    h: &SampleMatrix<T>,
    e_hz: &DMatrix<T>,
    e_zz: &DMatrix<T>,
) -> Result<HExtension<T>> {
    let z = y.stack(s, Role::S)?;
    if h.p() != z.p() {
        return Err(Error::invalid(format!("h-extension: z has {} samples, h has {}", z.p(), h.p())));
    }
    if e_hz.shape() != (h.dim(), z.dim()) || e_zz.shape() != (z.dim(), z.dim()) {
        return Err(Error::invalid(format!(
            "h-extension: E_hz is {:?}, E_zz is {:?} for dim(h)={}, dim(z)={}",
            e_hz.shape(),
            e_zz.shape(),
            h.dim(),
            z.dim()
        )));
    }
    let gain = decorrelating_gain(e_hz, e_zz)?;
    let g = subtract_projection(h, &gain, &z, Role::G);
    let s_tilde = s.stack(&g, Role::S)?;
    Ok(HExtension { g, s_tilde })
}

/// Entrywise square of the raw samples, then centered.
pub fn hadamard_square<T: Real>(y: &SampleMatrix<T>) -> Result<SampleMatrix<T>> {
    let raw = y.raw().map(|v| v * v);
    center(raw, Role::Ysq)
}

/// Distribution of an injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dist {
    /// `U[0, 1)` entries, then centered.
    #[default]
    #[serde(alias = "uniform01_centered")]
    Uniform,
    /// `N(0, 1)` entries, then centered.
    #[serde(alias = "gaussian01")]
    Gaussian,
}

impl Dist {
    pub fn parse(s: &str) -> Result<Dist> {
        match s {
            "uniform" => Ok(Dist::Uniform),
            "gaussian" => Ok(Dist::Gaussian),
            other => Err(Error::invalid(format!("unknown distribution `{other}` (uniform|gaussian)"))),
        }
    }

    fn draw<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            Dist::Uniform => rng.sample(Uniform::new(0.0, 1.0).expect("valid range")),
            Dist::Gaussian => rng.sample(StandardNormal),
        }
    }
}

/// Recipe for a random injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub dim: usize,
    pub dist: Dist,
    pub seed: u64,
}

impl InjectionSpec {
    pub fn new(dim: usize, dist: Dist, seed: u64) -> Self {
        InjectionSpec { dim, dist, seed }
    }
}

/// Draws `dim × p` injection samples. Rows are drawn one after another from
/// a single seeded stream, so a smaller `dim` with the same seed yields a
/// row-prefix of a larger one.
pub fn gen_injection<T: Real>(spec: &InjectionSpec, p: usize) -> Result<SampleMatrix<T>> {
    if p == 0 {
        return Err(Error::invalid("injection: p must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raw = DMatrix::from_row_iterator(spec.dim, p, (0..spec.dim * p).map(|_| T::lit(spec.dist.draw(&mut rng))));
    center(raw, Role::W)
}

/// `y = A·x + ξ` with uniform `x`, standard-normal `A` and `ξ ~ N(0, σ²I)`.
#[derive(Debug, Clone)]
pub struct LinearModel<T: Real> {
    pub a: DMatrix<T>,
    pub sigma: T,
}

impl<T: Real> LinearModel<T> {
    /// Draws the mixing matrix `A` from `seed`.
    pub fn new(m: usize, sigma: T, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Self::draw_mixing(m, &mut rng);
        LinearModel { a, sigma }
    }

    fn draw_mixing<R: Rng>(m: usize, rng: &mut R) -> DMatrix<T> {
        DMatrix::from_row_iterator(m, m, (0..m * m).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))))
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Draws raw `x` samples.
    pub fn sample_signal<R: Rng>(&self, p: usize, rng: &mut R) -> DMatrix<T> {
        let m = self.dim();
        let u = Uniform::new(0.0, 1.0).expect("valid range");
        DMatrix::from_row_iterator(m, p, (0..m * p).map(|_| T::lit(rng.sample(u))))
    }

    /// Raw observations `A·x + σ·ξ` for given raw `x`.
    pub fn observe<R: Rng>(&self, x_raw: &DMatrix<T>, rng: &mut R) -> DMatrix<T> {
        let (m, p) = (self.a.nrows(), x_raw.ncols());
        let mut y = &self.a * x_raw;
        if self.sigma != T::zero() {
            let noise =
                DMatrix::from_row_iterator(m, p, (0..m * p).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))));
            y += noise * self.sigma;
        }
        y
    }

    /// Draws a fresh centered `(x, y)` pair of `p` samples.
    pub fn sample<R: Rng>(&self, p: usize, rng: &mut R) -> Result<(SampleMatrix<T>, SampleMatrix<T>)> {
        let x_raw = self.sample_signal(p, rng);
        let y_raw = self.observe(&x_raw, rng);
        Ok((center(x_raw, Role::X)?, center(y_raw, Role::Y)?))
    }
}

/// Generates `p` samples of `y = A·x + ξ` (dimension `m`) reproducibly from
/// `seed`. Returns centered `x`, `y` and the mixing matrix `A`.
pub fn gen_linear_model<T: Real>(
    m: usize,
    p: usize,
    sigma: T,
    seed: u64,
) -> Result<(SampleMatrix<T>, SampleMatrix<T>, DMatrix<T>)> {
    if m == 0 || p == 0 {
        return Err(Error::invalid(format!("linear model needs m ≥ 1 and p ≥ 1 (got m={m}, p={p})")));
    }
    if sigma < T::zero() || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise level must be finite and nonnegative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = LinearModel::<T>::draw_mixing(m, &mut rng);
    let model = LinearModel { a, sigma };
    let (x, y) = model.sample(p, &mut rng)?;
    Ok((x, y, model.a))
}

/// Named sample matrices sharing one sample count, plus the specs any
/// generated injections were drawn from.
#[derive(Debug, Clone, Default)]
pub struct SampleSet<T: Real> {
    samples: BTreeMap<Role, SampleMatrix<T>>,
    specs: BTreeMap<Role, InjectionSpec>,
}

impl<T: Real> SampleSet<T> {
    pub fn new() -> Self {
        SampleSet { samples: BTreeMap::new(), specs: BTreeMap::new() }
    }

    /// Adds samples under their own role tag.
    pub fn insert(&mut self, sm: SampleMatrix<T>) -> Result<()> {
        if let Some(p) = self.p() {
            if sm.p() != p {
                return Err(Error::invalid(format!("role {} has {} samples, expected {}", sm.role, sm.p(), p)));
            }
        }
        self.samples.insert(sm.role, sm);
        Ok(())
    }

    pub fn with(mut self, sm: SampleMatrix<T>) -> Result<Self> {
        self.insert(sm)?;
        Ok(self)
    }

    /// Adds a generated injection and remembers its spec.
    pub fn with_injection(mut self, role: Role, spec: InjectionSpec) -> Result<Self> {
        let p = self.p().ok_or_else(|| Error::invalid("add data before injections"))?;
        self.insert(gen_injection(&spec, p)?.with_role(role))?;
        self.specs.insert(role, spec);
        Ok(self)
    }

    /// Adds `y∘y` under [`Role::Ysq`].
    pub fn with_hadamard_square(mut self) -> Result<Self> {
        let ysq = hadamard_square(self.require(Role::Y)?)?;
        self.insert(ysq)?;
        Ok(self)
    }

    pub fn get(&self, role: Role) -> Option<&SampleMatrix<T>> {
        self.samples.get(&role)
    }

    pub fn require(&self, role: Role) -> Result<&SampleMatrix<T>> {
        self.get(role).ok_or_else(|| Error::invalid(format!("missing samples for role {role}")))
    }

    pub fn spec(&self, role: Role) -> Option<&InjectionSpec> {
        self.specs.get(&role)
    }

    pub fn p(&self) -> Option<usize> {
        self.samples.values().next().map(|s| s.p())
    }

    pub fn roles(&self) -> impl Iterator<Item = Role> + '_ {
        self.samples.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SampleMatrix<T>> {
        self.samples.values()
    }

    pub fn model(&self) -> Result<SecondOrderModel<T>> {
        build_model(self)
    }
}

/// Where the second-order statistics came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSource {
    Analytic,
    Sampled { p: usize },
}

/// Cross-covariance blocks `E_ab` among a set of roles.
#[derive(Debug, Clone)]
pub struct SecondOrderModel<T: Real> {
    blocks: BTreeMap<(Role, Role), DMatrix<T>>,
    dims: BTreeMap<Role, usize>,
    means: BTreeMap<Role, DVector<T>>,
    source: ModelSource,
}

impl<T: Real> SecondOrderModel<T> {
    /// Empty analytic model; populate with [`Self::with_block`].
    pub fn analytic() -> Self {
        SecondOrderModel {
            blocks: BTreeMap::new(),
            dims: BTreeMap::new(),
            means: BTreeMap::new(),
            source: ModelSource::Analytic,
        }
    }

    fn register_dim(&mut self, role: Role, d: usize) -> Result<()> {
        match self.dims.get(&role) {
            Some(&old) if old != d => {
                Err(Error::invalid(format!("role {role} has dimension {old}, block implies {d}")))
            }
            _ => {
                self.dims.insert(role, d);
                Ok(())
            }
        }
    }

    /// Stores `E_ab` (and `E_ba = E_abᵀ`). Diagonal blocks are symmetrized
    /// and must be PSD up to clamping.
    pub fn with_block(mut self, a: Role, b: Role, e: DMatrix<T>) -> Result<Self> {
        self.register_dim(a, e.nrows())?;
        self.register_dim(b, e.ncols())?;
        if a == b {
            matcore::psd_eigen(&e).map_err(|err| err.context(format!("E_{a}{a}")))?;
            self.blocks.insert((a, a), matcore::symmetrize(&e));
        } else {
            self.blocks.insert((b, a), e.transpose());
            self.blocks.insert((a, b), e);
        }
        Ok(self)
    }

    pub fn with_mean(mut self, role: Role, mean: DVector<T>) -> Result<Self> {
        self.register_dim(role, mean.len())?;
        self.means.insert(role, mean);
        Ok(self)
    }

    pub fn block(&self, a: Role, b: Role) -> Result<&DMatrix<T>> {
        self.blocks.get(&(a, b)).ok_or_else(|| Error::invalid(format!("model has no block E_{a}{b}")))
    }

    pub fn has_block(&self, a: Role, b: Role) -> bool {
        self.blocks.contains_key(&(a, b))
    }

    pub fn dim(&self, role: Role) -> Option<usize> {
        self.dims.get(&role).copied()
    }

    pub fn require_dim(&self, role: Role) -> Result<usize> {
        self.dim(role).ok_or_else(|| Error::invalid(format!("model has no role {role}")))
    }

    /// Stored mean of `role`, or zero when the model carries none.
    pub fn mean(&self, role: Role) -> DVector<T> {
        self.means.get(&role).cloned().unwrap_or_else(|| DVector::zeros(self.dim(role).unwrap_or(0)))
    }

    pub fn source(&self) -> ModelSource {
        self.source
    }

    pub fn roles(&self) -> impl Iterator<Item = Role> + '_ {
        self.dims.keys().copied()
    }

    /// Largest `‖E_ab − E_baᵀ‖_F` over stored pairs.
    pub fn max_asymmetry(&self) -> T {
        self.blocks.iter().fold(T::zero(), |acc, ((a, b), e)| {
            let other = &self.blocks[&(*b, *a)];
            acc.max(frob(&(e - other.transpose())))
        })
    }
}

/// Computes every pairwise block among the roles of `samples`.
pub fn build_model<T: Real>(samples: &SampleSet<T>) -> Result<SecondOrderModel<T>> {
    let p = samples.p().ok_or_else(|| Error::invalid("no samples to build a model from"))?;
    let mut model = SecondOrderModel {
        blocks: BTreeMap::new(),
        dims: BTreeMap::new(),
        means: BTreeMap::new(),
        source: ModelSource::Sampled { p },
    };
    let list: Vec<&SampleMatrix<T>> = samples.iter().collect();
    for (i, a) in list.iter().enumerate() {
        model.dims.insert(a.role, a.dim());
        model.means.insert(a.role, a.mean.clone());
        for b in &list[i..] {
            let e = cross_cov(a, b)?;
            if a.role == b.role {
                model.blocks.insert((a.role, a.role), matcore::symmetrize(&e));
            } else {
                model.blocks.insert((b.role, a.role), e.transpose());
                model.blocks.insert((a.role, b.role), e);
            }
        }
    }
    Ok(model)
}
