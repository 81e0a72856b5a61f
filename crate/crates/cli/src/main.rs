use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use tpca::harness::{
    self, flop_model, read_roles, result_to_json, rows_to_csv, Dataset, ExperimentConfig, ExperimentResult, Format,
    Task,
};
use tpca::{Dist, Error, Method, Result};

#[derive(Parser)]
#[command(name = "tpca", version, about = "Rank-constrained second-order estimators: fits, sweeps and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit methods and report predicted and training-set errors.
    Fit(Common),
    /// Fit, then measure the error on fresh data (generated datasets) or on
    /// the held-out second half of the samples (CSV datasets).
    Eval(Common),
    /// Sweep the h-injection dimension for pca3_ext, with baselines.
    SweepEta(Common),
    /// Sweep noise level and h-injection dimension.
    SweepNoise(Common),
    /// Time pca3, gbt2 and gklt on generated data with p = 3m.
    Bench(Common),
    /// Print the operation-count model.
    Flops(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// CSV dataset: header row, one sample per row.
    #[arg(long, conflicts_with = "gen")]
    data: Option<PathBuf>,
    /// Generated dataset, e.g. `m=34,p=366,sigma=1`.
    #[arg(long)]
    gen: Option<String>,
    /// JSON map from role to column range(s), optionally grouped under `cases`.
    #[arg(long)]
    roles: Option<PathBuf>,
    /// Comma-separated methods: gbt1, gbt2, gklt, pca3, pca3_ext, ttf.
    #[arg(long)]
    method: Option<String>,
    /// Rank budget(s): `17`, `1,2,4` or `start:end:step`.
    #[arg(long)]
    k: Option<String>,
    /// h-injection dimensions, same syntax as --k.
    #[arg(long)]
    eta: Option<String>,
    /// Noise levels: `1`, `0,0.5,1` or `start:end:step`.
    #[arg(long)]
    sigma: Option<String>,
    /// Seed(s), same syntax as --k.
    #[arg(long, default_value = "0")]
    seed: String,
    /// w-injection dimension (default: dimension of y).
    #[arg(long)]
    ell: Option<usize>,
    /// Signal dimensions for bench and flops.
    #[arg(long)]
    m: Option<String>,
    #[arg(long, default_value = "uniform")]
    dist: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::InvalidInput(format!("{what}: `{t}` is not valid"))))
        .collect()
}

/// `a,b,c` or inclusive `start:end:step`.
fn parse_int_grid(s: &str, what: &str) -> Result<Vec<u64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [_] => parse_list(s, what),
        [a, b, st] => {
            let (a, b, st): (u64, u64, u64) =
                (parse_list(a, what)?[0], parse_list(b, what)?[0], parse_list(st, what)?[0]);
            if st == 0 || a > b {
                return Err(Error::InvalidInput(format!("{what}: bad range `{s}`")));
            }
            Ok((a..=b).step_by(st as usize).collect())
        }
        _ => Err(Error::InvalidInput(format!("{what}: bad grid `{s}`"))),
    }
}

fn parse_float_grid(s: &str, what: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [_] => parse_list(s, what),
        [a, b, st] => {
            let (a, b, st): (f64, f64, f64) =
                (parse_list(a, what)?[0], parse_list(b, what)?[0], parse_list(st, what)?[0]);
            if st.is_nan() || st <= 0.0 || a > b {
                return Err(Error::InvalidInput(format!("{what}: bad range `{s}`")));
            }
            let n = ((b - a) / st + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| a + st * i as f64).collect())
        }
        _ => Err(Error::InvalidInput(format!("{what}: bad grid `{s}`"))),
    }
}

struct Generated {
    m: usize,
    p: usize,
    sigma: Option<f64>,
}

fn parse_gen(s: &str) -> Result<Generated> {
    let mut g = Generated { m: 0, p: 0, sigma: None };
    for kv in s.split(',') {
        let (key, val) =
            kv.split_once('=').ok_or_else(|| Error::InvalidInput(format!("--gen: expected key=value, got `{kv}`")))?;
        let bad = || Error::InvalidInput(format!("--gen: bad value for {key}: `{val}`"));
        match key.trim() {
            "m" => g.m = val.trim().parse().map_err(|_| bad())?,
            "p" => g.p = val.trim().parse().map_err(|_| bad())?,
            "sigma" => g.sigma = Some(val.trim().parse().map_err(|_| bad())?),
            other => return Err(Error::InvalidInput(format!("--gen: unknown key `{other}` (m, p, sigma)"))),
        }
    }
    if g.m == 0 || g.p == 0 {
        return Err(Error::InvalidInput("--gen needs m and p".into()));
    }
    Ok(g)
}

fn build_config(task: Task, c: &Common) -> Result<ExperimentConfig> {
    let (dataset, gen_sigma, m) = match (&c.data, &c.gen) {
        (Some(path), None) => {
            let roles_path = c.roles.as_ref().ok_or_else(|| Error::InvalidInput("--data needs --roles".into()))?;
            let cases = read_roles(roles_path)?;
            let m = cases[0].roles[&tpca::Role::X].iter().map(|(s, e)| e.saturating_sub(*s)).sum();
            (Dataset::Csv { path: path.clone(), cases }, None, m)
        }
        (None, Some(g)) => {
            let g = parse_gen(g)?;
            (Dataset::Generated { m: g.m, p: g.p }, g.sigma, g.m)
        }
        (None, None) if task == Task::Bench => (Dataset::Generated { m: 1, p: 3 }, None, 1),
        _ => return Err(Error::InvalidInput("give exactly one of --data or --gen".into())),
    };
    let mut cfg = ExperimentConfig::new(task, dataset);
    cfg.methods = match (&c.method, task) {
        (Some(list), _) => list.split(',').map(|s| Method::parse(s.trim())).collect::<Result<_>>()?,
        (None, Task::Bench) => vec![Method::Pca3, Method::Gbt2, Method::Gklt],
        (None, Task::SweepEta | Task::SweepNoise) => vec![Method::Pca3Ext],
        (None, _) => vec![Method::Pca3],
    };
    cfg.k = match &c.k {
        Some(k) => parse_int_grid(k, "--k")?.into_iter().map(|v| v as usize).collect(),
        None if task == Task::Bench => Vec::new(),
        None => vec![(m / 2).max(1)],
    };
    if let Some(eta) = &c.eta {
        cfg.eta_grid = parse_int_grid(eta, "--eta")?.into_iter().map(|v| v as usize).collect();
    }
    cfg.sigma_grid = match (&c.sigma, gen_sigma) {
        (Some(s), _) => parse_float_grid(s, "--sigma")?,
        (None, Some(s)) => vec![s],
        (None, None) => vec![1.0],
    };
    cfg.seeds = parse_int_grid(&c.seed, "--seed")?;
    cfg.ell = c.ell;
    cfg.dist = Dist::parse(&c.dist)?;
    if let Some(ms) = &c.m {
        cfg.m_grid = parse_int_grid(ms, "--m")?.into_iter().map(|v| v as usize).collect();
    }
    cfg.output = c.out.clone();
    cfg.format = Format::parse(&c.format)?;
    Ok(cfg)
}

fn print_result(result: &ExperimentResult, format: Format) -> Result<()> {
    let text = match format {
        Format::Csv => rows_to_csv(&result.rows)?,
        Format::Json => result_to_json(result),
    };
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn flops(c: &Common) -> Result<()> {
    let ms = parse_int_grid(c.m.as_deref().unwrap_or("34"), "--m")?;
    let mut out = String::from("m,k,c_pca3,c_gbt2,c_gklt,pca3_over_gbt2,pca3_over_gklt\n");
    for m in ms {
        let ks = match &c.k {
            Some(k) => parse_int_grid(k, "--k")?,
            None => vec![(m / 2).max(1)],
        };
        for k in ks {
            let f = flop_model(m, k)?;
            let (r2, rk) = f.ratios();
            out += &format!("{m},{k},{},{},{},{r2:.6},{rk:.6}\n", f.pca3, f.gbt2, f.gklt);
        }
    }
    match &c.out {
        Some(path) => std::fs::write(path, out)?,
        None => std::io::stdout().write_all(out.as_bytes())?,
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let (task, common) = match &cli.command {
        Command::Fit(c) => (Task::Fit, c),
        Command::Eval(c) => (Task::Eval, c),
        Command::SweepEta(c) => (Task::SweepEta, c),
        Command::SweepNoise(c) => (Task::SweepNoise, c),
        Command::Bench(c) => (Task::Bench, c),
        Command::Flops(c) => return flops(c),
    };
    let cfg = build_config(task, common)?;
    let result = harness::run(&cfg)?;
    match &cfg.output {
        Some(path) => info!("wrote {} rows to {}", result.rows.len(), path.display()),
        None => print_result(&result, cfg.format)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
