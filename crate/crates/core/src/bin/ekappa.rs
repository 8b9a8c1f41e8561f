#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use elliptic_kappa::finite_n_jdf::{fn_density, marginal_density, JdfAtZ};
use elliptic_kappa::linalg;
use elliptic_kappa::mc_harness::{
    compare_to_model, run_experiment, BinEdges, ComparisonSpec, ExperimentConfig, Model, Scaling, TauSpec,
};
use elliptic_kappa::prt_kernels::EnsembleParams;
use elliptic_kappa::scaling_limits::{bulk_jdf, edge_jdf, weak_jdf, BulkPoint, EdgePoint, WeakPoint};
use elliptic_kappa::selftest::{self, SelftestOptions};
use elliptic_kappa::ensemble_sampler::MeasureOptions;
use elliptic_kappa::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_STATISTICAL: u8 = 4;

/// Condition numbers of real eigenvalues in the real elliptic ensemble.
///
/// Grid arguments accept a single value `v`, a list `a,b,c` or an inclusive
/// lattice `lo:hi:count`. Numbers are printed with 17 significant digits.
#[derive(Parser)]
#[command(name = "ekappa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-N joint density of an eigenvalue and its overlap.
    Jdf(JdfArgs),
    /// Finite-N density of real eigenvalues.
    Density(DensityArgs),
    /// Large-N limit laws.
    Limit(LimitArgs),
    /// Monte-Carlo experiment with an optional model comparison.
    Experiment(ExperimentArgs),
    /// Built-in consistency suites.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write to this file instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct JdfArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    tau: f64,
    #[arg(long, allow_hyphen_values = true)]
    z: String,
    /// Overlap in the `q` parametrization; density per unit `q`.
    #[arg(long, conflicts_with = "t", required_unless_present = "t")]
    q: Option<String>,
    /// Shifted overlap `t = kappa^2 - 1`; density per unit `t`.
    #[arg(long)]
    t: Option<String>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Normalize {
    /// Mean number of real eigenvalues per unit length.
    Count,
    /// Divided by its trapezoid integral over the emitted grid.
    Unit,
}

#[derive(Clone, Copy, ValueEnum)]
enum DensityMethod {
    /// Closed form (even N only).
    ClosedForm,
    /// Numerical integral of the joint density over the overlap.
    Integrated,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    tau: f64,
    #[arg(long, allow_hyphen_values = true)]
    z_grid: String,
    #[arg(long, value_enum, default_value = "count")]
    normalize: Normalize,
    #[arg(long, value_enum, default_value = "closed-form")]
    method: DensityMethod,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Regime {
    Bulk,
    Edge,
    Weak,
}

#[derive(Args)]
struct LimitArgs {
    #[arg(long, value_enum)]
    regime: Regime,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    z: Option<String>,
    #[arg(long)]
    t: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration; inline flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, conflicts_with = "a")]
    tau: Option<f64>,
    /// Weak-regime asymmetry, `tau = 1 - a^2 / (2N)`.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    matrices: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_scaling)]
    scaling: Option<Scaling>,
    /// `lin:lo:hi:bins`, `log:lo:hi:bins` or explicit edges `e0,e1,...`.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_bins)]
    z_bins: Option<BinEdges>,
    #[arg(long, value_parser = parse_bins)]
    t_bins: Option<BinEdges>,
    /// `finite_joint`, `finite_marginal`, `finite_density`, `bulk_joint`,
    /// `weak_slice:Z`, `finite_slice:Z` or `none`.
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelChoice>,
    /// Worker threads.
    #[arg(long, env = "EKAPPA_WORKERS")]
    workers: Option<usize>,
    /// Directory for `histogram.json`, `histogram.csv` and `report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the comparison report as JSON instead of a summary.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SelftestArgs {
    /// Kernel identity and tau -> 0 reduction only.
    #[arg(long)]
    quick: bool,
    /// Relative error injected into reference values (canary).
    #[arg(long, hide = true, default_value_t = 0.0)]
    perturb: f64,
}

#[derive(Clone, Copy)]
struct ModelChoice(Option<Model>);

enum Failure {
    Usage(String),
    Numeric(String),
    Statistical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::Unsupported(_) | Error::Format(_) | Error::Json(_) | Error::Io(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Usage(format!("cannot parse grid '{spec}'"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [lo, hi, count] => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            let count: usize = count.trim().parse().map_err(|_| bad())?;
            match count {
                0 => Err(bad()),
                1 => Ok(vec![lo]),
                _ => Ok((0..count)
                    .map(|i| if i + 1 == count { hi } else { lo + (hi - lo) * i as f64 / (count - 1) as f64 })
                    .collect()),
            }
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(bad()),
    }
}

fn parse_bins(spec: &str) -> Result<BinEdges, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number '{s}'"));
    let edges = match parts.as_slice() {
        [kind, lo, hi, bins] => {
            let bins: usize = bins.parse().map_err(|_| format!("bad bin count '{bins}'"))?;
            match *kind {
                "lin" => BinEdges::linear(num(lo)?, num(hi)?, bins),
                "log" => BinEdges::log(num(lo)?, num(hi)?, bins),
                _ => return Err(format!("unknown bin kind '{kind}'")),
            }
        }
        [list] => BinEdges::new(list.split(',').map(num).collect::<Result<_, _>>()?),
        _ => return Err(format!("cannot parse bins '{spec}'")),
    };
    edges.map_err(|e| e.to_string())
}

fn parse_scaling(s: &str) -> Result<Scaling, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown scaling '{s}'"))
}

fn parse_model(s: &str) -> Result<ModelChoice, String> {
    let (kind, arg) = match s.split_once(':') {
        Some((k, a)) => (k, Some(a.parse::<f64>().map_err(|_| format!("bad slice width '{a}'"))?)),
        None => (s, None),
    };
    let m = match (kind, arg) {
        ("none", None) => None,
        ("finite_joint", None) => Some(Model::FiniteJoint),
        ("finite_marginal", None) => Some(Model::FiniteMarginal),
        ("finite_density", None) => Some(Model::FiniteDensity),
        ("bulk_joint", None) => Some(Model::BulkJoint),
        ("weak_slice", Some(z_max)) => Some(Model::WeakSlice { z_max }),
        ("finite_slice", Some(z_max)) => Some(Model::FiniteSlice { z_max }),
        _ => return Err(format!("unknown model '{s}'")),
    };
    Ok(ModelChoice(m))
}

/// `{:.16e}`: 17 significant digits, exact round trip.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    fn render(&self, format: Format) -> String {
        let mut s = String::new();
        match format {
            Format::Csv => {
                s += &self.columns.join(",");
                s.push('\n');
                for r in &self.rows {
                    s += &r.iter().map(|&v| fmt(v)).collect::<Vec<_>>().join(",");
                    s.push('\n');
                }
            }
            Format::Json => {
                s.push('[');
                for (k, r) in self.rows.iter().enumerate() {
                    s += if k == 0 { "\n  {" } else { ",\n  {" };
                    let fields: Vec<String> =
                        self.columns.iter().zip(r).map(|(c, &v)| format!("\"{c}\": {}", fmt(v))).collect();
                    s += &fields.join(", ");
                    s.push('}');
                }
                s += "\n]\n";
            }
        }
        s
    }

    fn emit(&self, out: &OutputArgs) -> Result<(), Failure> {
        let text = self.render(out.format);
        match &out.output {
            Some(p) => std::fs::write(p, text)?,
            None => std::io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn cmd_jdf(a: &JdfArgs) -> Result<(), Failure> {
    let params = EnsembleParams::new(a.n, a.tau)?;
    let zs = parse_grid(&a.z)?;
    let (overlaps, per_q) = match (&a.q, &a.t) {
        (Some(q), None) => (parse_grid(q)?, true),
        (None, Some(t)) => (parse_grid(t)?, false),
        _ => return Err(Failure::Usage("give exactly one of --q and --t".into())),
    };
    if let Some(v) = overlaps.iter().find(|v| !(**v > 0.0)) {
        return Err(Failure::Usage(format!("overlap must be positive, got {v}")));
    }
    let s = 1.0 - a.tau;
    let mut table = Table::new(&["z", "q", "t", "density"]);
    for &z in &zs {
        let at = JdfAtZ::new(params, z)?;
        for &v in &overlaps {
            let row = if per_q {
                vec![z, v, v * s, at.density_q(v)?]
            } else {
                vec![z, v / s, v, at.density_t(v)?]
            };
            table.rows.push(row);
        }
    }
    table.emit(&a.out)
}

fn cmd_density(a: &DensityArgs) -> Result<(), Failure> {
    let params = EnsembleParams::new(a.n, a.tau)?;
    let zs = parse_grid(&a.z_grid)?;
    let mut values = Vec::with_capacity(zs.len());
    for &z in &zs {
        values.push(match a.method {
            DensityMethod::ClosedForm => fn_density(params, z)?,
            DensityMethod::Integrated => marginal_density(params, z)?,
        });
    }
    if let Normalize::Unit = a.normalize {
        if zs.len() < 2 || zs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Failure::Usage("unit normalization needs an increasing grid of 2+ points".into()));
        }
        let mass: f64 = zs.windows(2).zip(values.windows(2)).map(|(z, v)| 0.5 * (z[1] - z[0]) * (v[0] + v[1])).sum();
        values.iter_mut().for_each(|v| *v /= mass);
    }
    let mut table = Table::new(&["z", "density"]);
    table.rows = zs.iter().zip(&values).map(|(&z, &v)| vec![z, v]).collect();
    table.emit(&a.out)
}

fn need<T: Copy>(v: Option<T>, flag: &str, regime: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::Usage(format!("--{flag} is required for the {regime} regime")))
}

fn need_grid(v: &Option<String>, flag: &str, regime: &str) -> Result<Vec<f64>, Failure> {
    parse_grid(v.as_deref().ok_or_else(|| Failure::Usage(format!("--{flag} is required for the {regime} regime")))?)
}

fn cmd_limit(a: &LimitArgs) -> Result<(), Failure> {
    let table = match a.regime {
        Regime::Bulk => {
            let tau = need(a.tau, "tau", "bulk")?;
            let mut table = Table::new(&["z", "t", "density"]);
            for z in need_grid(&a.z, "z", "bulk")? {
                for t in need_grid(&a.t, "t", "bulk")? {
                    table.rows.push(vec![z, t, bulk_jdf(BulkPoint::new(tau, z, t)?)]);
                }
            }
            table
        }
        Regime::Edge => {
            let tau = need(a.tau, "tau", "edge")?;
            let mut table = Table::new(&["delta", "sigma", "density"]);
            for d in need_grid(&a.delta, "delta", "edge")? {
                for s in need_grid(&a.sigma, "sigma", "edge")? {
                    table.rows.push(vec![d, s, edge_jdf(EdgePoint::new(tau, d, s)?)]);
                }
            }
            table
        }
        Regime::Weak => {
            let asym = need(a.a, "a", "weak")?;
            let mut table = Table::new(&["z", "t", "density"]);
            for z in need_grid(&a.z, "z", "weak")? {
                for t in need_grid(&a.t, "t", "weak")? {
                    table.rows.push(vec![z, t, weak_jdf(WeakPoint::new(asym, z, t)?)]);
                }
            }
            table
        }
    };
    table.emit(&a.out)
}

/// Some OpenBLAS builds pick broken kernels on some CPUs; the library
/// detects this, and the process restarts itself with a safe kernel family.
fn ensure_backend() -> Result<(), Failure> {
    if linalg::backend_check().is_ok() {
        return Ok(());
    }
    #[cfg(unix)]
    if std::env::var_os(linalg::CORETYPE_VAR).is_none() {
        use std::os::unix::process::CommandExt;
        let exe = std::env::current_exe()?;
        let err = std::process::Command::new(exe)
            .args(std::env::args_os().skip(1))
            .env(linalg::CORETYPE_VAR, linalg::FALLBACK_CORETYPE)
            .exec();
        return Err(Failure::Numeric(format!("cannot restart with a safe BLAS kernel: {err}")));
    }
    linalg::backend_check().map_err(|e| Failure::Numeric(e.to_string()))
}

fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut c = match &a.config {
        Some(path) => serde_json::from_str::<ExperimentConfig>(&std::fs::read_to_string(path)?).map_err(Error::from)?,
        None => {
            let missing = |f: &str| Failure::Usage(format!("--{f} is required without --config"));
            let n = a.n.ok_or_else(|| missing("n"))?;
            ExperimentConfig {
                n,
                tau_spec: match (a.tau, a.a) {
                    (Some(t), None) => TauSpec::Fixed(t),
                    (None, Some(x)) => TauSpec::Weak(x),
                    _ => return Err(Failure::Usage("give exactly one of --tau and --a".into())),
                },
                num_matrices: a.matrices.ok_or_else(|| missing("matrices"))?,
                seed: a.seed.unwrap_or(0),
                scaling: a.scaling.unwrap_or(Scaling::Raw),
                z_bins: a.z_bins.clone().ok_or_else(|| missing("z-bins"))?,
                t_bins: match &a.t_bins {
                    Some(b) => b.clone(),
                    None => BinEdges::log(1e-3, 1e3, 30)?,
                },
                measure: MeasureOptions::default(),
                comparison: None,
            }
        }
    };
    if a.config.is_some() {
        if let Some(n) = a.n {
            c.n = n;
        }
        match (a.tau, a.a) {
            (Some(t), _) => c.tau_spec = TauSpec::Fixed(t),
            (_, Some(x)) => c.tau_spec = TauSpec::Weak(x),
            _ => {}
        }
        if let Some(m) = a.matrices {
            c.num_matrices = m;
        }
        if let Some(s) = a.seed {
            c.seed = s;
        }
        if let Some(s) = a.scaling {
            c.scaling = s;
        }
        if let Some(b) = &a.z_bins {
            c.z_bins = b.clone();
        }
        if let Some(b) = &a.t_bins {
            c.t_bins = b.clone();
        }
    }
    if let Some(ModelChoice(m)) = a.model {
        c.comparison = m.map(|model| match c.comparison {
            Some(spec) => ComparisonSpec { model, ..spec },
            None => ComparisonSpec::new(model),
        });
    }
    c.validate()?;
    Ok(c)
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<(), Failure> {
    let config = experiment_config(a)?;
    let workers = match a.workers {
        Some(0) => return Err(Failure::Usage("--workers must be at least 1".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    ensure_backend()?;
    let h = run_experiment(&config, workers)?;
    if let Some(dir) = &a.out {
        h.save(dir)?;
    }
    let mut stdout = std::io::stdout();
    if !a.json {
        writeln!(stdout, "digest {}", h.digest())?;
        writeln!(stdout, "matrices {}", h.total_matrices)?;
        writeln!(stdout, "observations {}", h.total_observations)?;
        writeln!(stdout, "discards {}", h.discards)?;
    }
    let Some(spec) = &config.comparison else {
        return Ok(());
    };
    let report = compare_to_model(&h, spec)?;
    if let Some(dir) = &a.out {
        std::fs::write(dir.join("report.json"), report.to_json() + "\n")?;
    }
    if a.json {
        writeln!(stdout, "{}", report.to_json())?;
    } else {
        writeln!(stdout, "model {}", report.model.name())?;
        writeln!(stdout, "cells {}", report.used_cells)?;
        writeln!(stdout, "chi_square {} dof {}", fmt(report.chi_square), report.degrees_of_freedom)?;
        writeln!(stdout, "p_value {}", fmt(report.p_value))?;
        writeln!(stdout, "max_abs_z {}", fmt(report.max_abs_z))?;
        writeln!(stdout, "result {}", if report.passed { "PASS" } else { "FAIL" })?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Statistical(format!(
            "comparison against {} failed (p = {:.3e}, max |z| = {:.3})",
            report.model.name(),
            report.p_value,
            report.max_abs_z
        )))
    }
}

fn cmd_selftest(a: &SelftestArgs) -> Result<(), Failure> {
    ensure_backend()?;
    let report = selftest::run(SelftestOptions {
        quick: a.quick,
        perturbation: a.perturb,
    })?;
    let mut stdout = std::io::stdout();
    for s in &report.suites {
        writeln!(
            stdout,
            "{:<4} {:<20} checks {:>6}  worst {:.3e}  tol {:.0e}  {:.2}s",
            if s.passed { "ok" } else { "FAIL" },
            s.name,
            s.checks,
            s.worst,
            s.tolerance,
            s.seconds
        )?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Statistical("self-test failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Jdf(a) => cmd_jdf(a),
        Command::Density(a) => cmd_density(a),
        Command::Limit(a) => cmd_limit(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (EXIT_USAGE, m),
                Failure::Numeric(m) => (EXIT_NUMERIC, m),
                Failure::Statistical(m) => (EXIT_STATISTICAL, m),
            };
            eprintln!("ekappa: {msg}");
            ExitCode::from(code)
        }
    }
}
