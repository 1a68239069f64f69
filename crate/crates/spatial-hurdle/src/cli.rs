//! Command-line plumbing over the library modules.
//!
//! Subcommands: `fit`, `predict`, `diagnose`, `simulate`, `aggregate`,
//! `derive-rh`. Every subcommand is deterministic: rerunning with identical
//! inputs, flags, and seed produces byte-identical output files, and no
//! subcommand modifies its inputs.
//!
//! Numeric settings may also come from a `key = value` config file passed via
//! `--config` (one pair per line, `#` comments allowed, optional quotes around
//! values). Explicit flags always win over file values.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 the fit hit its iteration
//! cap before converging (the partial bundle is still written).

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::climate::derive_rh_raster;
use crate::diagnostics::{
    pearson_residuals_state, prediction_surfaces_state, roc_curve, write_residuals_csv,
    write_roc_csv, write_surfaces_csv,
};
use crate::error::{Error, Result};
use crate::gmrf::{Hyperparams, DEFAULT_BETA_PRIOR_PRECISION};
use crate::grid::{
    aggregate_monthly, load_dataset, read_raster_csv, read_stack_csv, write_counts_csv,
    write_dataset_csv, write_raster_csv,
};
use crate::hurdle_model::{Dataset, DesignMatrix, LatentState};
use crate::inference::{
    beta_covariance, maximize_marginal, read_fit_bundle, write_fit_bundle, FitBundle, FitResult,
    NelderMeadSettings, NewtonSettings,
};
use crate::simulate::{simulate_dataset, CovariateSpec, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT_ERROR: i32 = 1;
pub const EXIT_NON_CONVERGENCE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "spatial-hurdle",
    version,
    about = "Spatial Poisson hurdle models with latent GMRF effects"
)]
struct Cli {
    /// Optional key=value config file; explicit flags win over file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the hurdle model to a dataset CSV and write a result bundle.
    Fit(FitArgs),
    /// Write fitted probability/intensity/expected-count surfaces for a
    /// dataset under a previously fitted bundle.
    Predict(PredictArgs),
    /// Write ROC, residual, and surface diagnostics for a fitted bundle.
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic dataset with known ground truth.
    Simulate(SimulateArgs),
    /// Aggregate a daily raster stack into monthly occurrence counts.
    Aggregate(AggregateArgs),
    /// Derive relative humidity from dew-point and air-temperature rasters.
    DeriveRh(DeriveRhArgs),
}

#[derive(clap::Args, Debug, Default)]
struct FitArgs {
    /// Dataset CSV with header row,col,count,<covariates...>.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Output directory for theta.csv, coefficients.csv, latent_fields.csv,
    /// report.txt.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Inner Newton convergence tolerance [default: 1e-7].
    #[arg(long, value_name = "EPS")]
    newton_tolerance: Option<f64>,
    /// Nelder-Mead objective-spread tolerance [default: 1e-7; 1e-3 trades
    /// accuracy for speed on large grids].
    #[arg(long, value_name = "EPS")]
    nm_tolerance: Option<f64>,
    /// Inner Newton iteration cap [default: 100].
    #[arg(long, value_name = "N")]
    newton_max_iterations: Option<usize>,
    /// Outer Nelder-Mead iteration cap; hitting it exits 2 with partial
    /// outputs [default: 400].
    #[arg(long, value_name = "N")]
    nm_max_iterations: Option<usize>,
    /// Prior precision for regression coefficients [default: 1e-6].
    #[arg(long, value_name = "B")]
    beta_prior_precision: Option<f64>,
    /// Initial hyperparameter values for the optimizer [default: 1.0 each].
    #[arg(long, value_name = "K")]
    init_kappa0: Option<f64>,
    #[arg(long, value_name = "T")]
    init_tau0: Option<f64>,
    #[arg(long, value_name = "K")]
    init_kappa_plus: Option<f64>,
    #[arg(long, value_name = "T")]
    init_tau_plus: Option<f64>,
    /// Standardize covariate columns to mean 0, sd 1 for the optimizer;
    /// coefficients and intervals are reported back on the original scale.
    #[arg(long)]
    standardize: bool,
    /// Disable warm starts and the gradient-norm convergence supplement,
    /// running the bare textbook iteration with no accelerations.
    #[arg(long)]
    strict: bool,
}

#[derive(clap::Args, Debug)]
struct PredictArgs {
    /// Dataset CSV providing the grid and covariates.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Directory holding a fit bundle (theta.csv, coefficients.csv,
    /// latent_fields.csv).
    #[arg(long, value_name = "DIR")]
    fit: PathBuf,
    /// Output CSV of per-cell pi, lambda, and expected count.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct DiagnoseArgs {
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    #[arg(long, value_name = "DIR")]
    fit: PathBuf,
    /// Output directory for roc.csv, residuals.csv, surfaces.csv.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(clap::Args, Debug, Default)]
struct SimulateArgs {
    /// Output dataset CSV.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Optional CSV of the true latent fields (cell,u0,up).
    #[arg(long, value_name = "FILE")]
    truth_out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    rows: Option<usize>,
    #[arg(long, value_name = "N")]
    cols: Option<usize>,
    /// RNG seed [default: 0].
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Comma-separated zero-part coefficients, intercept first
    /// [default: "0.0"].
    #[arg(long, value_name = "LIST")]
    beta0: Option<String>,
    /// Comma-separated count-part coefficients, same length as --beta0.
    #[arg(long, value_name = "LIST")]
    beta_plus: Option<String>,
    /// True hyperparameters [default: 1.0 each].
    #[arg(long, value_name = "K")]
    kappa0: Option<f64>,
    #[arg(long, value_name = "T")]
    tau0: Option<f64>,
    #[arg(long, value_name = "K")]
    kappa_plus: Option<f64>,
    #[arg(long, value_name = "T")]
    tau_plus: Option<f64>,
    /// Covariate spec `name:constant:V` or `name:uniform:LO:HI`; repeatable.
    #[arg(long = "covariate", value_name = "SPEC")]
    covariates: Vec<String>,
}

#[derive(clap::Args, Debug)]
struct AggregateArgs {
    /// Daily raster stack CSV with header day,row,col,value.
    #[arg(long, value_name = "FILE")]
    stack: PathBuf,
    /// Coarsening factor: each output cell covers factor x factor fine cells.
    #[arg(long, value_name = "F")]
    factor: Option<usize>,
    /// Output counts CSV (row,col,count).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct DeriveRhArgs {
    /// Dew-point temperature raster CSV (Kelvin).
    #[arg(long, value_name = "FILE")]
    dew: PathBuf,
    /// Air temperature raster CSV (Kelvin).
    #[arg(long, value_name = "FILE")]
    air: PathBuf,
    /// Output relative-humidity raster CSV.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

/// Run the CLI against explicit arguments, returning the process exit code.
/// `args` must include the program name in position 0.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT_ERROR,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT_ERROR
        }
    }
}

/// Run the CLI against the process arguments.
pub fn run() -> i32 {
    run_from_args(std::env::args_os())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Fit(args) => cmd_fit(args, &cfg),
        Command::Predict(args) => cmd_predict(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Simulate(args) => cmd_simulate(args, &cfg),
        Command::Aggregate(args) => cmd_aggregate(args, &cfg),
        Command::DeriveRh(args) => cmd_derive_rh(args),
    }
}

/// Parsed `key = value` config file. Keys use the same kebab-case names as
/// the long flags.
struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    fn empty() -> Self {
        Self {
            values: HashMap::new(),
        }
    }

    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::empty());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::FileFormat {
            path: path.to_path_buf(),
            message: format!("cannot read config file: {e}"),
        })?;
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::FileFormat {
                    path: path.to_path_buf(),
                    message: format!("line {}: expected key = value, got {raw:?}", lineno + 1),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().trim_matches('"').to_string();
            if values.insert(key.clone(), value).is_some() {
                return Err(Error::FileFormat {
                    path: path.to_path_buf(),
                    message: format!("line {}: duplicate key {key:?}", lineno + 1),
                });
            }
        }
        Ok(Self { values })
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse_with(key, |raw| raw.parse::<f64>().ok().filter(|v| v.is_finite()))
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse_with(key, |raw| raw.parse::<usize>().ok())
    }

    fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse_with(key, |raw| raw.parse::<u64>().ok())
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.parse_with(key, |raw| match raw {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    fn string(&self, key: &str) -> Option<String> {
        self.values.get(key).cloned()
    }

    fn parse_with<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => parse(raw).map(Some).ok_or_else(|| {
                Error::Invalid(format!("config key {key:?}: cannot parse value {raw:?}"))
            }),
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Invalid(format!(
            "input file {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn require_positive(name: &str, value: f64) -> Result<f64> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::Invalid(format!(
            "{name} must be positive and finite, got {value}"
        )));
    }
    Ok(value)
}

struct FitSettings {
    nm: NelderMeadSettings,
    init: Hyperparams,
    standardize: bool,
}

fn fit_settings(args: &FitArgs, cfg: &FileConfig) -> Result<FitSettings> {
    let newton_tolerance = require_positive(
        "newton-tolerance",
        args.newton_tolerance
            .or(cfg.f64("newton-tolerance")?)
            .unwrap_or(1e-7),
    )?;
    let nm_tolerance = require_positive(
        "nm-tolerance",
        args.nm_tolerance.or(cfg.f64("nm-tolerance")?).unwrap_or(1e-7),
    )?;
    let beta_prior_precision = require_positive(
        "beta-prior-precision",
        args.beta_prior_precision
            .or(cfg.f64("beta-prior-precision")?)
            .unwrap_or(DEFAULT_BETA_PRIOR_PRECISION),
    )?;
    let newton_max_iterations = args
        .newton_max_iterations
        .or(cfg.usize("newton-max-iterations")?)
        .unwrap_or(NewtonSettings::default().max_iterations);
    let nm_max_iterations = args
        .nm_max_iterations
        .or(cfg.usize("nm-max-iterations")?)
        .unwrap_or(NelderMeadSettings::default().max_iterations);
    let strict = args.strict || cfg.bool("strict")?.unwrap_or(false);
    let standardize = args.standardize || cfg.bool("standardize")?.unwrap_or(false);

    let init = Hyperparams::new(
        args.init_kappa0.or(cfg.f64("init-kappa0")?).unwrap_or(1.0),
        args.init_tau0.or(cfg.f64("init-tau0")?).unwrap_or(1.0),
        args.init_kappa_plus
            .or(cfg.f64("init-kappa-plus")?)
            .unwrap_or(1.0),
        args.init_tau_plus
            .or(cfg.f64("init-tau-plus")?)
            .unwrap_or(1.0),
    )?;

    let newton = NewtonSettings {
        tolerance: newton_tolerance,
        max_iterations: newton_max_iterations,
        gradient_supplement: if strict {
            None
        } else {
            NewtonSettings::default().gradient_supplement
        },
        ..NewtonSettings::default()
    };
    let nm = NelderMeadSettings {
        spread_tolerance: nm_tolerance,
        max_iterations: nm_max_iterations,
        newton,
        warm_start: !strict,
        beta_prior_precision,
    };
    Ok(FitSettings {
        nm,
        init,
        standardize,
    })
}

fn cmd_fit(args: &FitArgs, cfg: &FileConfig) -> Result<i32> {
    let settings = fit_settings(args, cfg)?;
    require_file(&args.data)?;
    let data = load_dataset(&args.data)?;

    let fit = if settings.standardize {
        let (scaled, means, sds) = standardize_covariates(&data)?;
        let mut fit = maximize_marginal(&scaled, &settings.init, &settings.nm)?;
        destandardize_fit(&mut fit, &means, &sds)?;
        fit
    } else {
        maximize_marginal(&data, &settings.init, &settings.nm)?
    };

    write_fit_bundle(&fit, &args.out)?;
    let t = &fit.theta_hat;
    println!("converged: {}", fit.convergence_report.converged);
    println!(
        "log marginal posterior: {:.4}",
        fit.log_marginal_posterior
    );
    println!(
        "theta: kappa0={:.4} tau0={:.4} kappa_plus={:.4} tau_plus={:.4}",
        t.kappa0(),
        t.tau0(),
        t.kappa_plus(),
        t.tau_plus()
    );
    if fit.convergence_report.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "warning: optimizer stopped after {} iterations without meeting the \
             spread tolerance; outputs reflect the best point found",
            fit.convergence_report.nm_iterations
        );
        Ok(EXIT_NON_CONVERGENCE)
    }
}

/// Replace each covariate column by (z - mean)/sd. The intercept column is
/// untouched. Returns the scaled dataset plus the per-covariate means and
/// sample standard deviations needed to undo the map.
fn standardize_covariates(data: &Dataset) -> Result<(Dataset, Vec<f64>, Vec<f64>)> {
    let n = data.n();
    let k = data.k();
    if n < 2 {
        return Err(Error::Invalid(
            "standardization needs at least two active cells".into(),
        ));
    }
    let mut means = vec![0.0; k];
    let mut sds = vec![0.0; k];
    for j in 0..k {
        let mut sum = 0.0;
        for i in 0..n {
            sum += data.design().row(i)[j + 1];
        }
        let mean = sum / n as f64;
        let mut ss = 0.0;
        for i in 0..n {
            let d = data.design().row(i)[j + 1] - mean;
            ss += d * d;
        }
        let sd = (ss / (n as f64 - 1.0)).sqrt();
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::Invalid(format!(
                "covariate {:?} is constant; it cannot be standardized",
                data.covariate_names()[j]
            )));
        }
        means[j] = mean;
        sds[j] = sd;
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row = data.design().row(i);
            let mut out = Vec::with_capacity(k + 1);
            out.push(row[0]);
            for j in 0..k {
                out.push((row[j + 1] - means[j]) / sds[j]);
            }
            out
        })
        .collect();
    let design = DesignMatrix::from_rows(rows)?;
    let scaled = Dataset::new(
        data.grid().clone(),
        data.counts().to_vec(),
        design,
        data.covariate_names().to_vec(),
    )?;
    Ok((scaled, means, sds))
}

/// Map a fit on the standardized design back to the original covariate scale.
///
/// With z̃ⱼ = (zⱼ - mⱼ)/sⱼ the linear predictor β̃₀ + Σ β̃ⱼ z̃ⱼ equals
/// β₀ + Σ βⱼ zⱼ for β₀ = β̃₀ - Σ β̃ⱼ mⱼ/sⱼ and βⱼ = β̃ⱼ/sⱼ, i.e. β = Tβ̃ for a
/// triangular T. Coefficients map through T and their covariance through
/// T·Cov(β̃)·Tᵀ, which needs the full coefficient covariance block — the
/// intercept's variance picks up cross terms, so marginal variances alone
/// would understate it. Latent fields and hyperparameters are unchanged.
fn destandardize_fit(fit: &mut FitResult, means: &[f64], sds: &[f64]) -> Result<()> {
    let k = means.len();
    let m = k + 1;
    let cov = beta_covariance(fit)?;

    let mut t = vec![vec![0.0; m]; m];
    t[0][0] = 1.0;
    for j in 0..k {
        t[0][j + 1] = -means[j] / sds[j];
        t[j + 1][j + 1] = 1.0 / sds[j];
    }

    for (part, offset) in [(0usize, 0usize), (1, m)] {
        let tilde = if part == 0 {
            fit.x_hat.beta0.clone()
        } else {
            fit.x_hat.beta_plus.clone()
        };
        if tilde.len() != m {
            return Err(Error::Dimension {
                context: "coefficient block",
                expected: m,
                got: tilde.len(),
            });
        }
        let mut beta = vec![0.0; m];
        for i in 0..m {
            beta[i] = (0..m).map(|j| t[i][j] * tilde[j]).sum();
        }
        // V = T C Tᵀ restricted to this part's block of the joint coefficient
        // covariance.
        let mut se = vec![0.0; m];
        for i in 0..m {
            let mut v = 0.0;
            for a in 0..m {
                for b in 0..m {
                    v += t[i][a] * cov[offset + a][offset + b] * t[i][b];
                }
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "back-transformed variance for coefficient {i} is not positive: {v}"
                )));
            }
            se[i] = v.sqrt();
        }
        if part == 0 {
            fit.x_hat.beta0 = beta;
        } else {
            fit.x_hat.beta_plus = beta;
        }
        for i in 0..m {
            fit.std_errors[offset + i] = se[i];
        }
    }
    Ok(())
}

/// Load a bundle and check it matches the dataset's shape and covariates.
fn load_bundle_for(data: &Dataset, dir: &Path) -> Result<FitBundle> {
    let bundle = read_fit_bundle(dir)?;
    if bundle.covariate_names != data.covariate_names() {
        return Err(Error::Invalid(format!(
            "fit bundle covariates {:?} do not match dataset covariates {:?}",
            bundle.covariate_names,
            data.covariate_names()
        )));
    }
    if bundle.state.u0.len() != data.n() {
        return Err(Error::Dimension {
            context: "fit bundle latent field",
            expected: data.n(),
            got: bundle.state.u0.len(),
        });
    }
    Ok(bundle)
}

fn cmd_predict(args: &PredictArgs) -> Result<i32> {
    require_file(&args.data)?;
    let data = load_dataset(&args.data)?;
    let bundle = load_bundle_for(&data, &args.fit)?;
    let surfaces = prediction_surfaces_state(&bundle.state, &data)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_surfaces_csv(&surfaces, &data, &args.out)?;
    Ok(EXIT_OK)
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<i32> {
    require_file(&args.data)?;
    let data = load_dataset(&args.data)?;
    let bundle = load_bundle_for(&data, &args.fit)?;

    let surfaces = prediction_surfaces_state(&bundle.state, &data)?;
    let residuals = pearson_residuals_state(&bundle.state, &data)?;
    let roc = roc_curve(&surfaces.pi, data.counts())?;

    std::fs::create_dir_all(&args.out)?;
    write_roc_csv(&roc, &args.out.join("roc.csv"))?;
    write_residuals_csv(&residuals, &data, &args.out.join("residuals.csv"))?;
    write_surfaces_csv(&surfaces, &data, &args.out.join("surfaces.csv"))?;

    println!("AUC = {:.3}", roc.auc);
    match residuals.mean_over_positive {
        Some(mean) => println!(
            "Pearson residuals: {} undefined of {}; mean over positive counts = {:.4}",
            residuals.undefined_count,
            data.n(),
            mean
        ),
        None => println!(
            "Pearson residuals: {} undefined of {}; mean over positive counts = NA",
            residuals.undefined_count,
            data.n()
        ),
    }
    Ok(EXIT_OK)
}

fn parse_f64_list(name: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|piece| {
            let piece = piece.trim();
            piece
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Invalid(format!("{name}: cannot parse {piece:?} as a number"))
                })
        })
        .collect()
}

/// Parse `name:constant:V` or `name:uniform:LO:HI`.
fn parse_covariate_spec(raw: &str) -> Result<(String, CovariateSpec)> {
    let parts: Vec<&str> = raw.split(':').map(str::trim).collect();
    let bad = || {
        Error::Invalid(format!(
            "covariate spec {raw:?}: expected name:constant:V or name:uniform:LO:HI"
        ))
    };
    match parts.as_slice() {
        [name, kind, v] if kind.eq_ignore_ascii_case("constant") => {
            let value: f64 = v.parse().map_err(|_| bad())?;
            Ok((name.to_string(), CovariateSpec::Constant(value)))
        }
        [name, kind, lo, hi] if kind.eq_ignore_ascii_case("uniform") => {
            let low: f64 = lo.parse().map_err(|_| bad())?;
            let high: f64 = hi.parse().map_err(|_| bad())?;
            Ok((name.to_string(), CovariateSpec::Uniform { low, high }))
        }
        _ => Err(bad()),
    }
}

fn cmd_simulate(args: &SimulateArgs, cfg: &FileConfig) -> Result<i32> {
    let n_rows = args
        .rows
        .or(cfg.usize("rows")?)
        .ok_or_else(|| Error::Invalid("simulate requires --rows".into()))?;
    let n_cols = args
        .cols
        .or(cfg.usize("cols")?)
        .ok_or_else(|| Error::Invalid("simulate requires --cols".into()))?;
    let seed = args.seed.or(cfg.u64("seed")?).unwrap_or(0);
    let beta0_raw = args
        .beta0
        .clone()
        .or_else(|| cfg.string("beta0"))
        .unwrap_or_else(|| "0.0".into());
    let beta_plus_raw = args
        .beta_plus
        .clone()
        .or_else(|| cfg.string("beta-plus"))
        .unwrap_or_else(|| "0.0".into());
    let theta = Hyperparams::new(
        args.kappa0.or(cfg.f64("kappa0")?).unwrap_or(1.0),
        args.tau0.or(cfg.f64("tau0")?).unwrap_or(1.0),
        args.kappa_plus.or(cfg.f64("kappa-plus")?).unwrap_or(1.0),
        args.tau_plus.or(cfg.f64("tau-plus")?).unwrap_or(1.0),
    )?;
    let covariate_specs: Vec<String> = if !args.covariates.is_empty() {
        args.covariates.clone()
    } else {
        cfg.string("covariates")
            .map(|s| s.split(',').map(|p| p.trim().to_string()).collect())
            .unwrap_or_default()
    };
    let covariates = covariate_specs
        .iter()
        .map(|raw| parse_covariate_spec(raw))
        .collect::<Result<Vec<_>>>()?;

    let config = SimConfig {
        n_rows,
        n_cols,
        beta0: parse_f64_list("beta0", &beta0_raw)?,
        beta_plus: parse_f64_list("beta-plus", &beta_plus_raw)?,
        theta,
        covariates,
        seed,
    };
    let (data, truth) = simulate_dataset(&config)?;
    write_dataset_csv(&args.out, &data)?;
    if let Some(truth_path) = &args.truth_out {
        write_truth_csv(truth_path, &truth)?;
    }
    Ok(EXIT_OK)
}

/// Write true latent fields as `cell,u0,up`, the same layout as a fitted
/// bundle's latent_fields.csv so recovery comparisons line up by row.
fn write_truth_csv(path: &Path, truth: &LatentState) -> Result<()> {
    let mut text = String::from("cell,u0,up\n");
    for i in 0..truth.u0.len() {
        text.push_str(&format!(
            "{i},{:.16e},{:.16e}\n",
            truth.u0[i], truth.u_plus[i]
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_aggregate(args: &AggregateArgs, cfg: &FileConfig) -> Result<i32> {
    let factor = args
        .factor
        .or(cfg.usize("factor")?)
        .ok_or_else(|| Error::Invalid("aggregate requires --factor".into()))?;
    require_file(&args.stack)?;
    let stack = read_stack_csv(&args.stack)?;
    let counts = aggregate_monthly(&stack, factor)?;
    write_counts_csv(&args.out, &counts)?;
    Ok(EXIT_OK)
}

fn cmd_derive_rh(args: &DeriveRhArgs) -> Result<i32> {
    require_file(&args.dew)?;
    require_file(&args.air)?;
    let dew = read_raster_csv(&args.dew)?;
    let air = read_raster_csv(&args.air)?;
    let (rh, clamped) = derive_rh_raster(&dew, &air)?;
    write_raster_csv(&args.out, &rh)?;
    println!("clamped {clamped} supersaturated cells");
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn config_file_parses_and_flags_win() {
        let f = write_temp(
            "# comment\n\
             newton-tolerance = 1e-5\n\
             nm-max-iterations = 7\n\
             strict = true\n\
             beta0 = \"0.5,1.0\"\n",
        );
        let cfg = FileConfig::load(Some(f.path())).unwrap();
        assert_eq!(cfg.f64("newton-tolerance").unwrap(), Some(1e-5));
        assert_eq!(cfg.usize("nm-max-iterations").unwrap(), Some(7));
        assert_eq!(cfg.bool("strict").unwrap(), Some(true));
        assert_eq!(cfg.string("beta0").as_deref(), Some("0.5,1.0"));
        assert_eq!(cfg.f64("absent").unwrap(), None);

        // A flag value overrides the file; unset flags fall back to the file;
        // keys absent everywhere use the defaults.
        let args = FitArgs {
            newton_tolerance: Some(3e-6),
            ..FitArgs::default()
        };
        let settings = fit_settings(&args, &cfg).unwrap();
        assert_eq!(settings.nm.newton.tolerance, 3e-6);
        assert_eq!(settings.nm.max_iterations, 7);
        assert!(!settings.nm.warm_start); // strict mode from file
        assert!(settings.nm.newton.gradient_supplement.is_none());
        assert_eq!(settings.nm.spread_tolerance, 1e-7);
    }

    #[test]
    fn config_file_rejects_malformed_lines() {
        let f = write_temp("newton-tolerance\n");
        assert!(FileConfig::load(Some(f.path())).is_err());
        let f = write_temp("a = 1\na = 2\n");
        assert!(FileConfig::load(Some(f.path())).is_err());
        let f = write_temp("newton-tolerance = banana\n");
        let cfg = FileConfig::load(Some(f.path())).unwrap();
        assert!(cfg.f64("newton-tolerance").is_err());
    }

    #[test]
    fn tolerances_must_be_positive() {
        let args = FitArgs {
            newton_tolerance: Some(0.0),
            ..FitArgs::default()
        };
        assert!(fit_settings(&args, &FileConfig::empty()).is_err());
        let args = FitArgs {
            nm_tolerance: Some(-1.0),
            ..FitArgs::default()
        };
        assert!(fit_settings(&args, &FileConfig::empty()).is_err());
    }

    #[test]
    fn covariate_specs_parse() {
        let (name, spec) = parse_covariate_spec("elev:constant:0.5").unwrap();
        assert_eq!(name, "elev");
        assert_eq!(spec, CovariateSpec::Constant(0.5));
        let (name, spec) = parse_covariate_spec("z:uniform:-1:1").unwrap();
        assert_eq!(name, "z");
        assert_eq!(
            spec,
            CovariateSpec::Uniform {
                low: -1.0,
                high: 1.0
            }
        );
        assert!(parse_covariate_spec("z:gaussian:0:1").is_err());
        assert!(parse_covariate_spec("z:constant").is_err());
        assert!(parse_covariate_spec("z:uniform:a:b").is_err());
    }

    #[test]
    fn standardized_fit_reports_original_scale() {
        // Solve the inner mode at one fixed θ in both parameterizations and
        // check the back-transform reconciles them. The two modes are not
        // bitwise equal (the vague coefficient prior applies on different
        // scales) but with a well-conditioned design the gap is ~1e-6.
        use crate::inference::{find_mode, ConvergenceReport};
        use crate::sparse::{FillOrdering, SparseCholesky, SparseSymmetric};

        let grid = GridSpec::full(3, 3).unwrap();
        let counts = vec![0, 2, 1, 0, 0, 3, 1, 0, 2];
        let z = [-1.2, -0.8, -0.4, 0.0, 0.3, 0.6, 0.9, 1.3, 1.6];
        let rows: Vec<Vec<f64>> = z.iter().map(|&v| vec![1.0, v]).collect();
        let design = DesignMatrix::from_rows(rows).unwrap();
        let data = Dataset::new(grid, counts, design, vec!["z".into()]).unwrap();
        let (scaled, means, sds) = standardize_covariates(&data).unwrap();

        let theta = Hyperparams::new(0.9, 1.1, 1.2, 0.8).unwrap();
        let newton = NewtonSettings::default();
        let (x_raw, h_raw) = find_mode(&theta, &data, &newton).unwrap();
        let (x_std, h_std) = find_mode(&theta, &scaled, &newton).unwrap();

        let stderrs = |h: &SparseSymmetric| -> Vec<f64> {
            SparseCholesky::factor(h, FillOrdering::ReverseCuthillMcKee)
                .unwrap()
                .diag_inverse()
                .iter()
                .map(|v| v.sqrt())
                .collect()
        };
        let se_raw = stderrs(&h_raw);
        let se_std = stderrs(&h_std);
        let mut fit_std = FitResult {
            theta_hat: theta,
            x_hat: x_std.clone(),
            hessian_at_mode: h_std,
            log_marginal_posterior: 0.0,
            std_errors: se_std.clone(),
            convergence_report: ConvergenceReport {
                converged: true,
                nm_iterations: 0,
                nm_evaluations: 0,
                final_objective_spread: 0.0,
                final_simplex_diameter: 0.0,
                newton_iterations_at_mode: 0,
            },
            covariate_names: vec!["z".into()],
        };
        destandardize_fit(&mut fit_std, &means, &sds).unwrap();

        // The back-transform rewrites the same linear predictor in original
        // coordinates: exact up to rounding, independent of identifiability.
        for i in 0..9 {
            let orig = data.design().row(i);
            let std = scaled.design().row(i);
            let eta_std = std[0] * x_std.beta0[0] + std[1] * x_std.beta0[1];
            let eta_back =
                orig[0] * fit_std.x_hat.beta0[0] + orig[1] * fit_std.x_hat.beta0[1];
            assert!(
                (eta_std - eta_back).abs() < 1e-10,
                "cell {i}: {eta_std} vs {eta_back}"
            );
        }
        // Slope scaling has a closed form: se(βⱼ) = se(β̃ⱼ)/sⱼ exactly.
        assert!((fit_std.std_errors[1] - se_std[1] / sds[0]).abs() < 1e-14);
        assert!((fit_std.std_errors[3] - se_std[3] / sds[0]).abs() < 1e-14);

        // Same θ, same model: both parameterizations must land on the same
        // original-scale mode and uncertainties.
        for i in 0..2 {
            assert!(
                (fit_std.x_hat.beta0[i] - x_raw.beta0[i]).abs() < 1e-4,
                "beta0[{i}]: {} vs {}",
                fit_std.x_hat.beta0[i],
                x_raw.beta0[i]
            );
            assert!(
                (fit_std.x_hat.beta_plus[i] - x_raw.beta_plus[i]).abs() < 1e-4,
                "beta_plus[{i}]: {} vs {}",
                fit_std.x_hat.beta_plus[i],
                x_raw.beta_plus[i]
            );
            assert!(
                (fit_std.std_errors[i] - se_raw[i]).abs() < 1e-3 * se_raw[i],
                "se0[{i}]: {} vs {}",
                fit_std.std_errors[i],
                se_raw[i]
            );
            assert!(
                (fit_std.std_errors[2 + i] - se_raw[2 + i]).abs() < 1e-3 * se_raw[2 + i],
                "se_plus[{i}]: {} vs {}",
                fit_std.std_errors[2 + i],
                se_raw[2 + i]
            );
        }
        for i in 0..9 {
            assert!((fit_std.x_hat.u0[i] - x_raw.u0[i]).abs() < 1e-6);
            assert!((fit_std.x_hat.u_plus[i] - x_raw.u_plus[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn standardize_rejects_constant_columns() {
        let grid = GridSpec::full(2, 2).unwrap();
        let design = DesignMatrix::from_rows(vec![vec![1.0, 5.0]; 4]).unwrap();
        let data = Dataset::new(grid, vec![0, 1, 0, 2], design, vec!["c".into()]).unwrap();
        assert!(standardize_covariates(&data).is_err());
    }

    #[test]
    fn float_lists_parse() {
        assert_eq!(
            parse_f64_list("beta0", "0.5, 1.0,-2").unwrap(),
            vec![0.5, 1.0, -2.0]
        );
        assert!(parse_f64_list("beta0", "0.5,,1").is_err());
        assert!(parse_f64_list("beta0", "inf").is_err());
    }
}
