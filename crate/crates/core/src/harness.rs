//! Experiment orchestration: dataset ingestion, parameter sweeps, the flop
//! model, wall-clock benchmarks and result persistence.
//!
//! Everything here works in `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::oracle::monte_carlo_with;
use crate::stats::{center, Dist, InjectionSpec, LinearModel, Role};
use crate::transforms::{self, reconstruction_error, Method, RankKTransform};
use crate::{Error, Result};
use crate::{SampleMatrix, SampleSet};

/// Header of every result table.
pub const RESULT_HEADER: &str = "case,method,k,ell,eta,sigma,seed,predicted_err,empirical_err,wall_time_s";

/// Method label of the clean-data baseline, GBT1 fit with `y = x`.
pub const CLEAN_BASELINE: &str = "gbt1_clean";

/// Label of the single case when a roles file has no `cases` map.
pub const DEFAULT_CASE: &str = "Case 1";

/// Fresh-data trials per `eval` row on generated datasets.
pub const EVAL_TRIALS: usize = 20;

/// Timed repetitions per benchmark row, after one warmup.
pub const BENCH_REPS: usize = 3;

// ---------------------------------------------------------------- roles --

/// Column ranges `[start, end)` per role. Several ranges for one role are
/// concatenated in order.
pub type RoleMap = BTreeMap<Role, Vec<(usize, usize)>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRoles {
    pub label: String,
    pub roles: RoleMap,
}

fn parse_ranges(role: &str, v: &Value) -> Result<Vec<(usize, usize)>> {
    let bad = || Error::invalid(format!("role `{role}`: expected [start, end) or a list of such pairs, got {v}"));
    let pair = |v: &Value| -> Option<(usize, usize)> {
        let a = v.as_array()?;
        match a.as_slice() {
            [s, e] => Some((s.as_u64()? as usize, e.as_u64()? as usize)),
            _ => None,
        }
    };
    if let Some(p) = pair(v) {
        return Ok(vec![p]);
    }
    let list = v.as_array().ok_or_else(bad)?;
    list.iter().map(|x| pair(x).ok_or_else(bad)).collect()
}

fn parse_role_map(obj: &Value) -> Result<RoleMap> {
    let map = obj.as_object().ok_or_else(|| Error::invalid("roles must be a JSON object"))?;
    let mut out = RoleMap::new();
    for (name, v) in map {
        let role = Role::parse(name)?;
        if !matches!(role, Role::X | Role::Y | Role::W | Role::H | Role::V) {
            return Err(Error::invalid(format!("role `{name}` cannot be read from data (use x, y, w, h or v)")));
        }
        out.insert(role, parse_ranges(name, v)?);
    }
    if !out.contains_key(&Role::X) {
        return Err(Error::invalid("roles must assign columns to x"));
    }
    Ok(out)
}

/// Parses a roles document: either `{"x": [0, 34], "y": [34, 68]}` or
/// `{"cases": {"Case 1": {...}, "Case 2": {...}}}`.
pub fn parse_roles(text: &str) -> Result<Vec<CaseRoles>> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::invalid(format!("roles file: {e}")))?;
    match v.get("cases") {
        Some(cases) => {
            let cases = cases.as_object().ok_or_else(|| Error::invalid("`cases` must be an object"))?;
            if cases.is_empty() {
                return Err(Error::invalid("`cases` is empty"));
            }
            cases
                .iter()
                .map(|(label, obj)| {
                    Ok(CaseRoles { label: label.clone(), roles: parse_role_map(obj).map_err(|e| e.context(label))? })
                })
                .collect()
        }
        None => Ok(vec![CaseRoles { label: DEFAULT_CASE.to_string(), roles: parse_role_map(&v)? }]),
    }
}

pub fn read_roles(path: &Path) -> Result<Vec<CaseRoles>> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display()))?;
    parse_roles(&text)
}

fn check_ranges(roles: &RoleMap, ncols: usize) -> Result<()> {
    let mut all: Vec<(usize, usize, Role)> = Vec::new();
    for (role, ranges) in roles {
        for &(s, e) in ranges {
            if s >= e || e > ncols {
                return Err(Error::invalid(format!(
                    "role {role}: column range [{s}, {e}) is empty or exceeds the {ncols} columns"
                )));
            }
            all.push((s, e, *role));
        }
    }
    all.sort();
    for w in all.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::invalid(format!(
                "column ranges [{}, {}) ({}) and [{}, {}) ({}) overlap",
                w[0].0, w[0].1, w[0].2, w[1].0, w[1].1, w[1].2
            )));
        }
    }
    Ok(())
}

// ------------------------------------------------------------- datasets --

/// A CSV table: header names and the values as `columns × rows`, that is
/// variables by samples.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub data: DMatrix<f64>,
}

/// Reads a header-plus-rows CSV file into variables-by-samples form.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(e, path))?;
    let headers: Vec<String> = rdr.headers().map_err(|e| csv_error(e, path))?.iter().map(String::from).collect();
    let ncols = headers.len();
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(e, path))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != ncols {
            return Err(Error::invalid(format!(
                "{}: line {line}: {} fields, header has {ncols}",
                path.display(),
                rec.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::invalid(format!("{}: line {line}, column {c}: `{field}` is not a number", path.display()))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::invalid(format!("{}: no data rows", path.display())));
    }
    // Row-major samples become the columns of a variables × samples matrix.
    let data = DMatrix::from_column_slice(ncols, rows, &values);
    Ok(Table { headers, data })
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    let line = e.position().map(|p| format!(" line {}:", p.line())).unwrap_or_default();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io).context(path.display()),
        kind => Error::invalid(format!("{}:{line} {kind:?}", path.display())),
    }
}

/// Writes a variables × samples matrix as a header-plus-rows CSV file.
pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    if table.headers.len() != table.data.nrows() {
        return Err(Error::invalid("header count does not match variable count"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(e, path))?;
    w.write_record(&table.headers).map_err(|e| csv_error(e, path))?;
    for col in table.data.column_iter() {
        w.write_record(col.iter().map(|v| format_float(*v))).map_err(|e| csv_error(e, path))?;
    }
    w.flush()?;
    Ok(())
}

fn select_rows(data: &DMatrix<f64>, ranges: &[(usize, usize)]) -> DMatrix<f64> {
    let idx: Vec<usize> = ranges.iter().flat_map(|&(s, e)| s..e).collect();
    data.select_rows(idx.iter())
}

/// Splits a table into one centered sample matrix per role.
pub fn split_roles(table: &Table, roles: &RoleMap) -> Result<BTreeMap<Role, SampleMatrix>> {
    check_ranges(roles, table.data.nrows())?;
    roles.iter().map(|(role, ranges)| Ok((*role, center(select_rows(&table.data, ranges), *role)?))).collect()
}

/// Reads `path` and splits it by `roles`.
pub fn ingest_csv(path: &Path, roles: &RoleMap) -> Result<BTreeMap<Role, SampleMatrix>> {
    split_roles(&read_table(path)?, roles)
}

// --------------------------------------------------------------- config --

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dataset {
    Csv {
        path: PathBuf,
        cases: Vec<CaseRoles>,
    },
    /// `y = A·x + σ·ξ` with `m`-dimensional uniform `x`.
    Generated {
        m: usize,
        p: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Fit,
    Eval,
    SweepEta,
    SweepNoise,
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn parse(s: &str) -> Result<Format> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::invalid(format!("unknown format `{other}` (csv|json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: Dataset,
    pub methods: Vec<Method>,
    pub k: Vec<usize>,
    pub eta_grid: Vec<usize>,
    pub sigma_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Dimension of generated `w`-injections; defaults to `dim(y)`.
    pub ell: Option<usize>,
    pub dist: Dist,
    /// Signal dimensions for benchmarks.
    pub m_grid: Vec<usize>,
    pub output: Option<PathBuf>,
    pub format: Format,
}

impl ExperimentConfig {
    /// A config with one of everything; adjust the fields as needed.
    pub fn new(task: Task, dataset: Dataset) -> Self {
        ExperimentConfig {
            task,
            dataset,
            methods: vec![Method::Pca3],
            k: vec![1],
            eta_grid: vec![0],
            sigma_grid: vec![1.0],
            seeds: vec![0],
            ell: None,
            dist: Dist::default(),
            m_grid: Vec::new(),
            output: None,
            format: Format::Csv,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> Result<()> {
        let empty = |name: &str| Error::invalid(format!("{name} must not be empty"));
        if self.methods.is_empty() {
            return Err(empty("method list"));
        }
        if self.seeds.is_empty() {
            return Err(empty("seed list"));
        }
        if self.sigma_grid.is_empty() {
            return Err(empty("sigma grid"));
        }
        if self.eta_grid.is_empty() {
            return Err(empty("eta grid"));
        }
        if self.task != Task::Bench && self.k.is_empty() {
            return Err(empty("k list"));
        }
        if self.task == Task::Bench && self.m_grid.is_empty() {
            return Err(empty("m grid"));
        }
        if let Some(s) = self.sigma_grid.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::invalid(format!("noise level {s} must be finite and nonnegative")));
        }
        Ok(())
    }
}

// --------------------------------------------------------------- result --

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub case: String,
    pub method: String,
    pub k: Option<usize>,
    pub ell: usize,
    pub eta: usize,
    pub sigma: f64,
    pub seed: u64,
    pub predicted_err: f64,
    pub empirical_err: f64,
    pub wall_time_s: f64,
}

impl ResultRow {
    fn sort_key(&self) -> (&str, &str, Option<usize>, usize, u64, u64) {
        (&self.case, &self.method, self.k, self.eta, self.sigma.to_bits(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub p: usize,
    pub m: usize,
    pub n: usize,
    pub version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub metadata: Metadata,
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    /// Rows of one method in one case, in stored order.
    pub fn select<'a>(&'a self, case: &'a str, method: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.case == case && r.method == method)
    }

    pub fn cases(&self) -> Vec<String> {
        let mut c: Vec<String> = self.rows.iter().map(|r| r.case.clone()).collect();
        c.dedup();
        c.sort();
        c.dedup();
        c
    }
}

fn sort_rows(rows: &mut [ResultRow]) {
    // σ is nonnegative, so its bit pattern orders like the value.
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Shortest decimal that parses back to the same `f64`; exponent form
/// outside `[1e-5, 1e16)`.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn row_fields(r: &ResultRow) -> [String; 10] {
    [
        r.case.clone(),
        r.method.clone(),
        r.k.map(|k| k.to_string()).unwrap_or_default(),
        r.ell.to_string(),
        r.eta.to_string(),
        format_float(r.sigma),
        r.seed.to_string(),
        format_float(r.predicted_err),
        format_float(r.empirical_err),
        format_float(r.wall_time_s),
    ]
}

/// Renders rows as CSV text with [`RESULT_HEADER`].
pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_HEADER.split(','))
        .and_then(|_| rows.iter().try_for_each(|r| w.write_record(row_fields(r))))
        .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses result rows from CSV text.
pub fn rows_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> =
        rdr.headers().map_err(|e| Error::invalid(format!("csv: {e}")))?.iter().map(String::from).collect();
    if header.join(",") != RESULT_HEADER {
        return Err(Error::invalid(format!("unexpected result header `{}`", header.join(","))));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::invalid(format!("csv: {e}")))?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |c: &str| Error::invalid(format!("line {line}: bad `{c}` field"));
            let num = |i: usize, c: &str| rec[i].parse::<f64>().map_err(|_| bad(c));
            let int = |i: usize, c: &str| rec[i].parse::<u64>().map_err(|_| bad(c));
            Ok(ResultRow {
                case: rec[0].to_string(),
                method: rec[1].to_string(),
                k: if rec[2].is_empty() { None } else { Some(int(2, "k")? as usize) },
                ell: int(3, "ell")? as usize,
                eta: int(4, "eta")? as usize,
                sigma: num(5, "sigma")?,
                seed: int(6, "seed")?,
                predicted_err: num(7, "predicted_err")?,
                empirical_err: num(8, "empirical_err")?,
                wall_time_s: num(9, "wall_time_s")?,
            })
        })
        .collect()
}

fn metadata_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Pretty-printed JSON with a trailing newline.
pub fn result_to_json(result: &ExperimentResult) -> String {
    serde_json::to_string_pretty(result).expect("result serializes") + "\n"
}

/// Writes `result` to `path`. CSV output carries the metadata in a
/// `<path>.meta.json` sidecar.
pub fn write_result(result: &ExperimentResult, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            fs::write(path, rows_to_csv(&result.rows)?)?;
            let meta = serde_json::to_string_pretty(&result.metadata).expect("metadata serializes");
            fs::write(metadata_path(path), meta + "\n")?;
        }
        Format::Json => fs::write(path, result_to_json(result))?,
    }
    Ok(())
}

/// Reads a result written by [`write_result`].
pub fn read_result(path: &Path, format: Format) -> Result<ExperimentResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display()))?;
    match format {
        Format::Csv => {
            let rows = rows_from_csv(&text)?;
            let meta = fs::read_to_string(metadata_path(path))?;
            let metadata = serde_json::from_str(&meta).map_err(|e| Error::invalid(format!("metadata: {e}")))?;
            Ok(ExperimentResult { metadata, rows })
        }
        Format::Json => serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display()))),
    }
}

// ------------------------------------------------------------ flop model --

/// Operation counts of the three rank-constrained transforms for
/// `m = n = ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounts {
    pub pca3: u128,
    pub gbt2: u128,
    pub gklt: u128,
}

impl FlopCounts {
    /// `(pca3 / gbt2, pca3 / gklt)`.
    pub fn ratios(&self) -> (f64, f64) {
        (self.pca3 as f64 / self.gbt2 as f64, self.pca3 as f64 / self.gklt as f64)
    }
}

pub fn flop_model(m: u64, k: u64) -> Result<FlopCounts> {
    if m == 0 || k == 0 || k > m {
        return Err(Error::invalid(format!("flop model needs 1 ≤ k ≤ m (got m={m}, k={k})")));
    }
    let (m, k) = (m as u128, k as u128);
    let (m2, m3) = (m * m, m * m * m);
    Ok(FlopCounts {
        pca3: 52 * m3 + 2 * m2 * (k + 1),
        gbt2: 140 * m3 + 2 * m2 * (k + 2),
        gklt: 240 * m3 + 4 * m2 * (k + 1) + m * k,
    })
}

// ------------------------------------------------------------ execution --

/// Raw inputs of one case at one `(seed, σ)` point.
#[derive(Debug, Clone)]
struct CaseInputs {
    label: String,
    x: SampleMatrix,
    y: SampleMatrix,
    w: Option<SampleMatrix>,
    h: Option<SampleMatrix>,
    v: Option<SampleMatrix>,
    /// Generator for fresh data, when the case is synthetic.
    generator: Option<LinearModel<f64>>,
    sigma: f64,
    seed: u64,
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

const TAG_MODEL: u64 = 1;
const TAG_W: u64 = 2;
const TAG_H: u64 = 3;
const TAG_V: u64 = 4;

/// `y = A·x + σ·ξ` for given raw `x`, with `A` and `ξ` drawn from `seed`.
fn synthesize_y(x: &SampleMatrix, sigma: f64, seed: u64) -> Result<(SampleMatrix, LinearModel<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_MODEL));
    let gen = LinearModel::new(x.dim(), sigma, derive_seed(seed, TAG_MODEL));
    let y = center(gen.observe(&x.raw(), &mut rng), Role::Y)?;
    Ok((y, gen))
}

fn prepare_cases(config: &ExperimentConfig, seed: u64, sigma: f64) -> Result<Vec<CaseInputs>> {
    match &config.dataset {
        Dataset::Generated { m, p } => {
            let (x, y, a) = crate::stats::gen_linear_model::<f64>(*m, *p, sigma, seed)?;
            Ok(vec![CaseInputs {
                label: DEFAULT_CASE.to_string(),
                x,
                y,
                w: None,
                h: None,
                v: None,
                generator: Some(LinearModel { a, sigma }),
                sigma,
                seed,
            }])
        }
        Dataset::Csv { path, cases } => {
            let table = read_table(path)?;
            cases
                .iter()
                .map(|case| {
                    let mut parts = split_roles(&table, &case.roles).map_err(|e| e.context(&case.label))?;
                    let x = parts.remove(&Role::X).expect("roles include x");
                    let (y, generator, sigma) = match parts.remove(&Role::Y) {
                        Some(y) => (y, None, 0.0),
                        None => {
                            let (y, gen) = synthesize_y(&x, sigma, seed)?;
                            (y, Some(gen), sigma)
                        }
                    };
                    Ok(CaseInputs {
                        label: case.label.clone(),
                        x,
                        y,
                        w: parts.remove(&Role::W),
                        h: parts.remove(&Role::H),
                        v: parts.remove(&Role::V),
                        generator,
                        sigma,
                        seed,
                    })
                })
                .collect()
        }
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy)]
enum Job {
    Fit { method: Method, k: usize, eta: usize },
    Clean { k: usize },
}

struct Prepared {
    samples: SampleSet,
    ell: usize,
    eta: usize,
}

fn injection(
    provided: Option<&SampleMatrix>,
    dim: usize,
    role: Role,
    dist: Dist,
    seed: u64,
) -> (Option<SampleMatrix>, Option<InjectionSpec>) {
    match provided {
        Some(sm) => (Some(sm.rows(0..dim.min(sm.dim())).with_role(role)), None),
        None => (None, Some(InjectionSpec::new(dim, dist, seed))),
    }
}

fn add_injection(
    set: SampleSet,
    provided: Option<&SampleMatrix>,
    dim: usize,
    role: Role,
    dist: Dist,
    seed: u64,
) -> Result<SampleSet> {
    match injection(provided, dim, role, dist, seed) {
        (Some(sm), _) => set.with(sm),
        (None, Some(spec)) => set.with_injection(role, spec),
        (None, None) => unreachable!("one of the two is set"),
    }
}

fn prepare(case: &CaseInputs, method: Method, eta: usize, config: &ExperimentConfig) -> Result<Prepared> {
    let n = case.y.dim();
    let base = SampleSet::new().with(case.x.clone())?.with(case.y.clone())?;
    let ell = case.w.as_ref().map_or(config.ell.unwrap_or(n), |w| w.dim());
    let dist = config.dist;
    let seed = case.seed;
    let (samples, ell, eta) = match method {
        Method::Gbt1 | Method::Gklt => (base, 0, 0),
        Method::Gbt2 => (add_injection(base, case.v.as_ref(), n, Role::V, dist, derive_seed(seed, TAG_V))?, n, 0),
        Method::Pca3 | Method::Ttf => {
            (add_injection(base, case.w.as_ref(), ell, Role::W, dist, derive_seed(seed, TAG_W))?, ell, 0)
        }
        Method::Pca3Ext => {
            let set = add_injection(base, case.w.as_ref(), ell, Role::W, dist, derive_seed(seed, TAG_W))?;
            if let Some(h) = &case.h {
                if eta > h.dim() {
                    return Err(Error::invalid(format!("eta = {eta} exceeds the {} h columns in the data", h.dim())));
                }
            }
            let set = if eta > 0 {
                add_injection(set, case.h.as_ref(), eta, Role::H, dist, derive_seed(seed, TAG_H))?
            } else {
                set
            };
            (set, ell, eta)
        }
    };
    Ok(Prepared { samples, ell, eta })
}

/// The training samples a grid point of `config` fits on, per case. Lets
/// callers inspect the exact injections a sweep used.
pub fn training_samples(
    config: &ExperimentConfig,
    seed: u64,
    sigma: f64,
    method: Method,
    eta: usize,
) -> Result<Vec<(String, SampleSet)>> {
    prepare_cases(config, seed, sigma)?
        .iter()
        .map(|c| Ok((c.label.clone(), prepare(c, method, eta, config)?.samples)))
        .collect()
}

fn timed_fit(method: Method, samples: &SampleSet, k: usize) -> Result<(RankKTransform<f64>, f64)> {
    let start = Instant::now();
    let model = samples.model()?;
    let t = transforms::fit(method, &model, Some(samples), k)?;
    Ok((t, start.elapsed().as_secs_f64()))
}

fn training_error(t: &RankKTransform<f64>, samples: &SampleSet) -> Result<f64> {
    let x_hat = t.apply(samples.require(Role::Y)?, true)?;
    reconstruction_error(samples.require(Role::X)?, &x_hat)
}

/// Out-of-sample error: fresh data from the generator when there is one,
/// otherwise the second half of the samples (the fit used the first half).
fn held_out_error(
    case: &CaseInputs,
    method: Method,
    k: usize,
    eta: usize,
    config: &ExperimentConfig,
) -> Result<(RankKTransform<f64>, f64, f64, Prepared)> {
    match &case.generator {
        Some(gen) if case.w.is_none() && case.h.is_none() && case.v.is_none() => {
            let prep = prepare(case, method, eta, config)?;
            let (t, time) = timed_fit(method, &prep.samples, k)?;
            let mc =
                monte_carlo_with(gen, case.x.p(), EVAL_TRIALS, derive_seed(case.seed, 99), |y, s| t.apply_fresh(y, s))?;
            Ok((t, mc.mean, time, prep))
        }
        _ => {
            let p = case.x.p();
            if p < 4 {
                return Err(Error::invalid("hold-out evaluation needs at least 4 samples"));
            }
            let half = p / 2;
            let cut = |sm: &SampleMatrix, r: std::ops::Range<usize>| -> Result<SampleMatrix> {
                center(sm.raw().columns(r.start, r.len()).into_owned(), sm.role)
            };
            let part = |r: std::ops::Range<usize>| -> Result<CaseInputs> {
                Ok(CaseInputs {
                    label: case.label.clone(),
                    x: cut(&case.x, r.clone())?,
                    y: cut(&case.y, r.clone())?,
                    w: case.w.as_ref().map(|s| cut(s, r.clone())).transpose()?,
                    h: case.h.as_ref().map(|s| cut(s, r.clone())).transpose()?,
                    v: case.v.as_ref().map(|s| cut(s, r.clone())).transpose()?,
                    generator: None,
                    sigma: case.sigma,
                    seed: case.seed,
                })
            };
            let train = part(0..half)?;
            let test = part(half..2 * half)?;
            let prep = prepare(&train, method, eta, config)?;
            let (t, time) = timed_fit(method, &prep.samples, k)?;
            let test_prep = prepare(&test, method, eta, config)?;
            let x_hat = if test.w.is_some() || test.v.is_some() || test.h.is_some() {
                let second = test_prep.samples.get(Role::W).or(test_prep.samples.get(Role::V));
                t.apply_with(&test.y, second, test_prep.samples.get(Role::H))?
            } else {
                t.apply_fresh(&test.y, derive_seed(case.seed, 99))?
            };
            Ok((t, reconstruction_error(&test.x, &x_hat)?, time, prep))
        }
    }
}

fn run_job(case: &CaseInputs, job: Job, config: &ExperimentConfig) -> Result<ResultRow> {
    let row = |method: String, k: Option<usize>, ell, eta, pred, emp, time| ResultRow {
        case: case.label.clone(),
        method,
        k,
        ell,
        eta,
        sigma: case.sigma,
        seed: case.seed,
        predicted_err: pred,
        empirical_err: emp,
        wall_time_s: time,
    };
    match job {
        Job::Clean { k } => {
            let samples = SampleSet::new().with(case.x.clone())?.with(case.x.clone().with_role(Role::Y))?;
            let (t, time) = timed_fit(Method::Gbt1, &samples, k)?;
            let emp = training_error(&t, &samples)?;
            Ok(row(CLEAN_BASELINE.to_string(), Some(k), 0, 0, t.predicted_err(), emp, time))
        }
        Job::Fit { method, k, eta } => {
            let (t, emp, time, prep) = if config.task == Task::Eval {
                held_out_error(case, method, k, eta, config)?
            } else {
                let prep = prepare(case, method, eta, config)?;
                let (t, time) = timed_fit(method, &prep.samples, k)?;
                let emp = training_error(&t, &prep.samples)?;
                (t, emp, time, prep)
            };
            debug!("{} {method} k={k} eta={eta}: {:e}", case.label, t.predicted_err());
            Ok(row(method.name().to_string(), t.k(), prep.ell, prep.eta, t.predicted_err(), emp, time))
        }
    }
}

fn grid_jobs(config: &ExperimentConfig) -> Vec<Job> {
    let mut jobs = Vec::new();
    match config.task {
        Task::Fit | Task::Eval => {
            for &method in &config.methods {
                if method == Method::Ttf {
                    jobs.push(Job::Fit { method, k: config.k[0], eta: 0 });
                    continue;
                }
                for &k in &config.k {
                    if method == Method::Pca3Ext {
                        jobs.extend(config.eta_grid.iter().map(|&eta| Job::Fit { method, k, eta }));
                    } else {
                        jobs.push(Job::Fit { method, k, eta: 0 });
                    }
                }
            }
        }
        Task::SweepEta | Task::SweepNoise => {
            for &k in &config.k {
                jobs.extend(config.eta_grid.iter().map(|&eta| Job::Fit { method: Method::Pca3Ext, k, eta }));
                jobs.push(Job::Fit { method: Method::Gbt1, k, eta: 0 });
                jobs.push(Job::Fit { method: Method::Gbt2, k, eta: 0 });
                jobs.push(Job::Clean { k });
            }
        }
        Task::Bench => {}
    }
    jobs
}

fn run_grid(config: &ExperimentConfig, sigmas: &[f64]) -> Result<(Vec<ResultRow>, Metadata)> {
    let mut points = Vec::new();
    for &seed in &config.seeds {
        for &sigma in sigmas {
            points.extend(prepare_cases(config, seed, sigma)?);
        }
    }
    let first = points.first().ok_or_else(|| Error::invalid("no cases to run"))?;
    let metadata = Metadata {
        p: first.x.p(),
        m: first.x.dim(),
        n: first.y.dim(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
    };
    for case in &points {
        let bound = case.x.dim().min(case.y.dim());
        if let Some(k) = config.k.iter().find(|&&k| k == 0 || k > bound) {
            return Err(Error::invalid(format!("{}: k = {k} outside [1, {bound}]", case.label)));
        }
    }
    let jobs = grid_jobs(config);
    let tasks: Vec<(&CaseInputs, Job)> = points.iter().flat_map(|c| jobs.iter().map(move |j| (c, *j))).collect();
    info!("running {} grid points", tasks.len());
    let mut rows = tasks
        .par_iter()
        .map(|(case, job)| {
            run_job(case, *job, config)
                .map_err(|e| e.context(format!("{} at {job:?}, seed {}, sigma {}", case.label, case.seed, case.sigma)))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_rows(&mut rows);
    Ok((rows, metadata))
}

/// Fits every requested method on every grid point and records predicted
/// and training-set errors.
pub fn fit_grid(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let (rows, metadata) = run_grid(config, &config.sigma_grid)?;
    Ok(ExperimentResult { metadata, rows })
}

/// Extended three-term PCA over the `η` grid at the first noise level, with
/// GBT1, GBT2 and clean-data GBT1 baselines. The `h`-injections of
/// different `η` are prefixes of one draw.
pub fn sweep_eta(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let cfg = ExperimentConfig { task: Task::SweepEta, ..config.clone() };
    cfg.validate()?;
    let (rows, metadata) = run_grid(&cfg, &cfg.sigma_grid[..1])?;
    Ok(ExperimentResult { metadata, rows })
}

/// [`sweep_eta`] repeated for every noise level.
pub fn sweep_noise(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let cfg = ExperimentConfig { task: Task::SweepNoise, ..config.clone() };
    cfg.validate()?;
    let (rows, metadata) = run_grid(&cfg, &cfg.sigma_grid)?;
    Ok(ExperimentResult { metadata, rows })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Wall time of model construction plus fit on `y = A·x + ξ` with
/// `m = n = ℓ` and `p = 3m`, one warmup and the median of
/// [`BENCH_REPS`] runs. Runs sequentially so timings do not compete.
pub fn bench(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    if let Some(m) = config.methods.iter().find(|m| !matches!(m, Method::Pca3 | Method::Gbt2 | Method::Gklt)) {
        return Err(Error::invalid(format!("bench supports pca3, gbt2 and gklt, not {m}")));
    }
    let seed = config.seeds[0];
    let sigma = config.sigma_grid[0];
    let mut rows = Vec::new();
    for &m in &config.m_grid {
        let cfg = ExperimentConfig { dataset: Dataset::Generated { m, p: 3 * m }, ell: Some(m), ..config.clone() };
        let case = prepare_cases(&cfg, seed, sigma)?.remove(0);
        let ks: Vec<usize> = if config.k.is_empty() { vec![(m / 2).max(1)] } else { config.k.clone() };
        for &k in &ks {
            for &method in &config.methods {
                let prep = prepare(&case, method, 0, &cfg)?;
                let (warm, _) = timed_fit(method, &prep.samples, k)?;
                let mut times = Vec::with_capacity(BENCH_REPS);
                for _ in 0..BENCH_REPS {
                    times.push(timed_fit(method, &prep.samples, k)?.1);
                }
                let t = median(times);
                info!("bench m={m} {method}: {t:.4} s");
                rows.push(ResultRow {
                    case: format!("m={m}"),
                    method: method.name().to_string(),
                    k: Some(k),
                    ell: prep.ell,
                    eta: 0,
                    sigma,
                    seed,
                    predicted_err: warm.predicted_err(),
                    empirical_err: training_error(&warm, &prep.samples)?,
                    wall_time_s: t,
                });
            }
        }
    }
    let m = config.m_grid[0];
    let metadata =
        Metadata { p: 3 * m, m, n: m, version: env!("CARGO_PKG_VERSION").to_string(), config_hash: config.hash() };
    Ok(ExperimentResult { metadata, rows })
}

/// Dispatches on the task and writes the result when an output path is
/// set.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let result = match config.task {
        Task::Fit | Task::Eval => fit_grid(config)?,
        Task::SweepEta => sweep_eta(config)?,
        Task::SweepNoise => sweep_noise(config)?,
        Task::Bench => bench(config)?,
    };
    if let Some(path) = &config.output {
        write_result(&result, path, config.format)?;
    }
    Ok(result)
}
