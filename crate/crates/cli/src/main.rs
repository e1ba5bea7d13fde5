//! `mcah` — fit, simulate, replicate and predict for mixture cure additive
//! hazards models on partly interval-censored data.
//!
//! Every command resolves its settings as CLI flag > config-file key >
//! default, validates them before computing, writes outputs atomically
//! (temp file + rename) into `--out-dir`, and finishes with a
//! `manifest.json` recording the effective settings, input digests and
//! output digests. Data outputs are deterministic for identical inputs;
//! timestamps exist only in the manifest.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mcah::data::CovariateProfile;
use mcah::fit::{fit_dataset, FitOptions, FittedModel};
use mcah::inference::CoefBlock;
use mcah::io::{self, FitRecord, SolveDiagnosticsRecord};
use mcah::replicate::{self, ReplicationConfig, ReplicationReport};
use mcah::simgen::{simulate_with_latents, Scenario};
use mcah::smoothing::SmoothingConfig;
use mcah::solver::SolverConfig;
use mcah::Error;

#[derive(Parser)]
#[command(
    name = "mcah",
    version,
    about = "Mixture cure additive hazards models for partly interval-censored data",
    long_about = "Fits mixture cure additive hazards models to partly interval-censored \
                  survival data by constrained maximum penalized likelihood, with automatic \
                  smoothing selection and constraint-corrected standard errors."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a dataset CSV (writes fit.json, baseline.csv, coefficients.csv)
    Fit(FitArgs),
    /// Generate a synthetic dataset from a scenario (writes data.csv, tv.csv, latents.csv)
    Simulate(SimulateArgs),
    /// Run a Monte Carlo replication study (writes report.json and metric CSVs)
    Replicate(ReplicateArgs),
    /// Predict mixture survival curves from a saved fit.json (writes survival.csv)
    Predict(PredictArgs),
}

/// Fitting controls shared by `fit` and `replicate`.
#[derive(Args, Clone, Default)]
struct FitControlArgs {
    /// Observations per baseline bin (chunked-quantile bin rule)
    #[arg(long = "n-obs", value_name = "K")]
    n_obs: Option<usize>,
    /// Number of baseline bins; takes precedence over --n-obs
    #[arg(long, value_name = "M")]
    m: Option<usize>,
    /// Fixed smoothing value (0 disables the roughness penalty); omit to
    /// select automatically by marginal likelihood
    #[arg(long, value_name = "W")]
    omega: Option<f64>,
    /// Interior-point convergence threshold on the complementarity measure
    #[arg(long = "mu-tol", value_name = "TOL")]
    mu_tol: Option<f64>,
    /// Line-search backtracking factor, in (0, 1)
    #[arg(long, value_name = "E")]
    epsilon: Option<f64>,
    /// Centrality safeguard fraction, in (0, 1)
    #[arg(long, value_name = "Z")]
    zeta: Option<f64>,
    /// Barrier reduction factor, in (0, 1]
    #[arg(long, value_name = "X")]
    xi: Option<f64>,
    /// Confidence level for intervals, in (0, 1)
    #[arg(long, value_name = "L")]
    level: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV: header t_left,t_right then z_* and w_* columns; inf in
    /// t_right marks right censoring
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Long-format time-varying covariates: header id,time then x_* columns
    #[arg(long, value_name = "FILE")]
    tv: Option<PathBuf>,
    /// TOML file with snake_case equivalents of any flag; flags win
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    controls: FitControlArgs,
    /// Output directory (created if missing)
    #[arg(long = "out-dir", value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML; omitted keys take the reference defaults
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
    /// Base RNG seed, overriding the scenario file
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// TOML file with snake_case equivalents of any flag; flags win
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long = "out-dir", value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReplicateArgs {
    /// Scenario TOML; omitted keys take the reference defaults
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
    /// Number of simulate-fit replicates
    #[arg(long, value_name = "R")]
    reps: Option<usize>,
    /// Base RNG seed; replicate j uses seed + j
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Worker threads (0 = one per CPU)
    #[arg(long, value_name = "J")]
    jobs: Option<usize>,
    /// TOML file with snake_case equivalents of any flag; flags win
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    controls: FitControlArgs,
    /// Output directory (created if missing)
    #[arg(long = "out-dir", value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// fit.json produced by the fit command
    #[arg(long, value_name = "FILE")]
    fit: Option<PathBuf>,
    /// Covariate profile TOML: z = [...], w = [...], and optionally
    /// tv_times = [...] with tv_values = [[...], ...]
    #[arg(long, value_name = "FILE")]
    profile: Option<PathBuf>,
    /// Comma-separated prediction times
    #[arg(long, value_name = "T,T,...", value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Allowed extrapolation beyond the fitted horizon, as a fraction of it
    #[arg(long = "extrapolation-cap", value_name = "FRAC")]
    extrapolation_cap: Option<f64>,
    /// TOML file with snake_case equivalents of any flag; flags win
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long = "out-dir", value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

/// Config-file image of the flags (snake_case keys). Unknown keys are
/// rejected so typos cannot silently fall back to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    tv: Option<PathBuf>,
    fit: Option<PathBuf>,
    profile: Option<PathBuf>,
    times: Option<Vec<f64>>,
    extrapolation_cap: Option<f64>,
    n_obs: Option<usize>,
    m: Option<usize>,
    omega: Option<f64>,
    mu_tol: Option<f64>,
    epsilon: Option<f64>,
    zeta: Option<f64>,
    xi: Option<f64>,
    max_iter: Option<usize>,
    level: Option<f64>,
    seed: Option<u64>,
    jobs: Option<usize>,
    reps: Option<usize>,
    scenario: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Replicate(args) => cmd_replicate(args),
        Command::Predict(args) => cmd_predict(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 = input error, 3 = non-convergence, 4 = internal failure.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Data { .. } | Error::Config(_) | Error::Parse(_) => 2,
        Error::NonConvergence { .. } => 3,
        _ => 4,
    }
}

// ---------------------------------------------------------------------------
// Settings resolution
// ---------------------------------------------------------------------------

fn load_config(path: Option<&Path>) -> Result<FileConfig, Error> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = read_input_text(path)?;
    toml::from_str(&text)
        .map_err(|e| Error::Parse(format!("config file {}: {e}", path.display())))
}

fn read_input(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn read_input_text(path: &Path) -> Result<String, Error> {
    String::from_utf8(read_input(path)?)
        .map_err(|_| Error::Parse(format!("{} is not valid UTF-8", path.display())))
}

fn check_open_unit(name: &str, value: f64) -> Result<(), Error> {
    if value.is_finite() && 0.0 < value && value < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie strictly between 0 and 1, got {value}")))
    }
}

fn check_positive(name: &str, value: f64) -> Result<(), Error> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {value}")))
    }
}

/// Resolves the fitting options from flags and config file, validating
/// ranges before any computation starts.
fn resolve_fit_options(controls: &FitControlArgs, cfg: &FileConfig) -> Result<FitOptions, Error> {
    let mut solver = SolverConfig::default();
    if let Some(v) = controls.mu_tol.or(cfg.mu_tol) {
        check_positive("--mu-tol", v)?;
        solver.mu_tol = v;
    }
    if let Some(v) = controls.epsilon.or(cfg.epsilon) {
        check_open_unit("--epsilon", v)?;
        solver.epsilon = v;
    }
    if let Some(v) = controls.zeta.or(cfg.zeta) {
        check_open_unit("--zeta", v)?;
        solver.zeta = v;
    }
    if let Some(v) = controls.xi.or(cfg.xi) {
        if !(v.is_finite() && 0.0 < v && v <= 1.0) {
            return Err(Error::Config(format!("--xi must lie in (0, 1], got {v}")));
        }
        solver.xi = v;
    }
    if let Some(v) = cfg.max_iter {
        if v == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        solver.max_iter = v;
    }
    let mut smoothing = SmoothingConfig::default();
    if let Some(w) = controls.omega.or(cfg.omega) {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Config(format!("--omega must be nonnegative, got {w}")));
        }
        smoothing.omega = Some(w);
    }
    let level = controls.level.or(cfg.level).unwrap_or(0.95);
    check_open_unit("--level", level)?;
    let n_obs = controls.n_obs.or(cfg.n_obs);
    let m = controls.m.or(cfg.m);
    if n_obs == Some(0) || m == Some(0) {
        return Err(Error::Config("--n-obs and --m must be at least 1".into()));
    }
    Ok(FitOptions { n_obs, m, solver, smoothing, level })
}

fn resolve_scenario(
    flag: Option<&Path>,
    cfg: &FileConfig,
    seed_flag: Option<u64>,
    inputs: &mut Vec<InputDigest>,
) -> Result<Scenario, Error> {
    let path = flag.or(cfg.scenario.as_deref());
    let mut scenario = match path {
        Some(path) => {
            let text = read_input_text(path)?;
            inputs.push(InputDigest::new(path, text.as_bytes()));
            io::read_scenario_toml(&text)?
        }
        None => Scenario::default(),
    };
    if let Some(seed) = seed_flag.or(cfg.seed) {
        scenario.seed = seed;
    }
    Ok(scenario)
}

// ---------------------------------------------------------------------------
// Output directory, digests, manifest
// ---------------------------------------------------------------------------

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .fold(String::with_capacity(64), |mut acc, b| {
            use std::fmt::Write;
            let _ = write!(acc, "{b:02x}");
            acc
        })
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

impl InputDigest {
    fn new(path: &Path, bytes: &[u8]) -> Self {
        InputDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) }
    }
}

#[derive(Serialize)]
struct OutputDigest {
    file: String,
    sha256: String,
}

/// Output directory with atomic writes: content is buffered, written to a
/// temporary file beside the target, then renamed into place, so failed
/// runs never leave partial files.
struct OutDir {
    dir: PathBuf,
    outputs: Vec<OutputDigest>,
}

impl OutDir {
    fn create(dir: PathBuf) -> Result<Self, Error> {
        std::fs::create_dir_all(&dir)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutDir { dir, outputs: Vec::new() })
    }

    fn write_with<F>(&mut self, name: &str, fill: F) -> Result<(), Error>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), Error>,
    {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&buf)?;
        tmp.persist(self.dir.join(name))
            .map_err(|e| Error::Io(e.error))?;
        self.outputs.push(OutputDigest { file: name.to_string(), sha256: sha256_hex(&buf) });
        println!("wrote {}", self.dir.join(name).display());
        Ok(())
    }
}

/// Run provenance: effective settings, input and output digests, timings.
/// Timestamps live here and nowhere else, keeping data outputs reproducible.
#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    started_unix_seconds: u64,
    duration_seconds: f64,
    seed: Option<u64>,
    settings: serde_json::Value,
    inputs: &'a [InputDigest],
    outputs: &'a [OutputDigest],
}

struct RunTimer {
    started_unix_seconds: u64,
    clock: Instant,
}

impl RunTimer {
    fn start() -> Self {
        let started_unix_seconds = SystemTime::now()
            .duration_since(SystemTime::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunTimer { started_unix_seconds, clock: Instant::now() }
    }
}

fn write_manifest(
    out: &mut OutDir,
    timer: &RunTimer,
    command: &'static str,
    seed: Option<u64>,
    settings: serde_json::Value,
    inputs: &[InputDigest],
) -> Result<(), Error> {
    let manifest = RunManifest {
        tool: "mcah",
        version: env!("CARGO_PKG_VERSION"),
        command,
        started_unix_seconds: timer.started_unix_seconds,
        duration_seconds: timer.clock.elapsed().as_secs_f64(),
        seed,
        settings,
        inputs,
        outputs: &out.outputs,
    };
    let mut buf = Vec::new();
    io::write_json(&mut buf, &manifest)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&out.dir)?;
    tmp.write_all(&buf)?;
    tmp.persist(out.dir.join("manifest.json"))
        .map_err(|e| Error::Io(e.error))?;
    println!("wrote {}", out.dir.join("manifest.json").display());
    Ok(())
}

fn default_out_dir(flag: Option<PathBuf>, cfg: &FileConfig) -> PathBuf {
    flag.or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("mcah-out"))
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

fn cmd_fit(args: FitArgs) -> Result<(), Error> {
    let timer = RunTimer::start();
    let cfg = load_config(args.config.as_deref())?;
    let mut inputs = Vec::new();
    if let Some(path) = args.config.as_deref() {
        inputs.push(InputDigest::new(path, &read_input(path)?));
    }

    let data_path = args
        .data
        .clone()
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| Error::Config("a dataset is required (--data FILE or data = \"...\" in the config)".into()))?;
    let options = resolve_fit_options(&args.controls, &cfg)?;

    let data_bytes = read_input(&data_path)?;
    inputs.push(InputDigest::new(&data_path, &data_bytes));
    let tv_path = args.tv.clone().or_else(|| cfg.tv.clone());
    let tv_bytes = match &tv_path {
        Some(path) => {
            let bytes = read_input(path)?;
            inputs.push(InputDigest::new(path, &bytes));
            Some(bytes)
        }
        None => None,
    };
    let dataset = io::read_dataset_csv(data_bytes.as_slice(), tv_bytes.as_deref())?;

    let mut out = OutDir::create(default_out_dir(args.out_dir.clone(), &cfg))?;
    let settings = serde_json::json!({
        "data": data_path.display().to_string(),
        "tv": tv_path.as_ref().map(|p| p.display().to_string()),
        "n_obs": options.n_obs,
        "m": options.m,
        "omega": options.smoothing.omega,
        "mu_tol": options.solver.mu_tol,
        "epsilon": options.solver.epsilon,
        "zeta": options.solver.zeta,
        "xi": options.solver.xi,
        "level": options.level,
    });

    let model = match fit_dataset(&dataset, &options) {
        Ok(model) => model,
        Err(err) => {
            // Non-convergence still leaves a machine-readable diagnosis.
            if let Error::NonConvergence { reason, iterations, mu, dual_residual } = &err {
                let diag = SolveDiagnosticsRecord::from_failure(reason, *iterations, *mu, *dual_residual);
                out.write_with("error.json", |buf| io::write_json(buf, &diag))?;
                write_manifest(&mut out, &timer, "fit", None, settings, &inputs)?;
            }
            return Err(err);
        }
    };

    let record = FitRecord::from_model(&model);
    out.write_with("fit.json", |buf| io::write_json(buf, &record))?;
    out.write_with("baseline.csv", |buf| io::write_baseline_csv(buf, &model.baseline_curve()))?;
    out.write_with("coefficients.csv", |buf| io::write_coefficients_csv(buf, &model.coefficients))?;
    write_manifest(&mut out, &timer, "fit", None, settings, &inputs)?;

    print_fit_summary(&model);
    Ok(())
}

fn print_fit_summary(model: &FittedModel) {
    println!();
    println!(
        "Converged in {} interior-point iterations (mu {:.2e}, dual residual {:.2e})",
        model.diagnostics.iterations, model.diagnostics.mu, model.diagnostics.dual_residual
    );
    println!(
        "Baseline bins: {}   smoothing omega: {:.6e}   penalty df: {:.2}",
        model.layout.m, model.omega, model.nu
    );
    println!(
        "Log-likelihood: {:.6}   penalized: {:.6}",
        model.loglik, model.penalized_loglik
    );
    if !model.active_labels.is_empty() {
        println!("Active constraints: {}", model.active_labels.join(", "));
    }

    let pct = (model.level * 100.0).round();
    let fmt_p = |p: Option<f64>| match p {
        Some(p) if p < 5e-5 => "<0.0001".to_string(),
        Some(p) => format!("{p:.4}"),
        None => "boundary".to_string(),
    };

    println!();
    println!("Incidence model (logistic; OR = odds ratio)");
    println!("  {:<14} {:>10} {:>10} {:>24}", "covariate", "OR", "p-value", format!("{pct:.0}% CI (OR)"));
    for c in model.coefficients.iter().filter(|c| c.block == CoefBlock::Incidence) {
        let or = c.exp_estimate.map_or("--".into(), |v| format!("{v:.4}"));
        let ci = match (c.exp_ci_lower, c.exp_ci_upper) {
            (Some(lo), Some(hi)) => format!("({lo:.4}, {hi:.4})"),
            _ => "--".into(),
        };
        println!("  {:<14} {:>10} {:>10} {:>24}", c.name, or, fmt_p(c.p_two_sided), ci);
    }

    println!();
    println!("Latency model (additive hazards; HD = hazard difference)");
    println!("  {:<14} {:>10} {:>10} {:>24}", "covariate", "HD", "p-value", format!("{pct:.0}% CI"));
    for c in model
        .coefficients
        .iter()
        .filter(|c| c.block != CoefBlock::Incidence)
    {
        println!(
            "  {:<14} {:>10.4} {:>10} {:>24}",
            c.name,
            c.estimate,
            fmt_p(c.p_two_sided),
            format!("({:.4}, {:.4})", c.ci_lower, c.ci_upper)
        );
    }
    println!();
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let timer = RunTimer::start();
    let cfg = load_config(args.config.as_deref())?;
    let mut inputs = Vec::new();
    if let Some(path) = args.config.as_deref() {
        inputs.push(InputDigest::new(path, &read_input(path)?));
    }
    let scenario = resolve_scenario(args.scenario.as_deref(), &cfg, args.seed, &mut inputs)?;

    let (dataset, latents, diag) = simulate_with_latents(&scenario);

    let mut out = OutDir::create(default_out_dir(args.out_dir, &cfg))?;
    out.write_with("data.csv", |buf| io::write_dataset_csv(buf, &dataset))?;
    out.write_with("tv.csv", |buf| io::write_tv_csv(buf, &dataset))?;
    out.write_with("latents.csv", |buf| io::write_latents_csv(buf, &latents))?;
    let scenario_text = io::write_scenario_toml(&scenario)?;
    out.write_with("scenario.toml", |buf| {
        buf.extend_from_slice(scenario_text.as_bytes());
        Ok(())
    })?;
    let settings = serde_json::to_value(&scenario)
        .map_err(|e| Error::Parse(format!("serialising scenario: {e}")))?;
    write_manifest(&mut out, &timer, "simulate", Some(scenario.seed), settings, &inputs)?;

    println!();
    println!(
        "Simulated {} subjects (seed {}): {} events, {} left, {} interval, {} right censored",
        diag.n, scenario.seed, diag.n_event, diag.n_left, diag.n_interval, diag.n_right
    );
    println!(
        "Non-cured fraction {:.3}; right-censoring proportion {:.3}",
        diag.non_cured_fraction(),
        diag.right_censoring_proportion()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// replicate
// ---------------------------------------------------------------------------

fn cmd_replicate(args: ReplicateArgs) -> Result<(), Error> {
    let timer = RunTimer::start();
    let cfg = load_config(args.config.as_deref())?;
    let mut inputs = Vec::new();
    if let Some(path) = args.config.as_deref() {
        inputs.push(InputDigest::new(path, &read_input(path)?));
    }
    let scenario = resolve_scenario(args.scenario.as_deref(), &cfg, args.seed, &mut inputs)?;
    let fit = resolve_fit_options(&args.controls, &cfg)?;
    let reps = args.reps.or(cfg.reps).unwrap_or(100);
    let jobs = args.jobs.or(cfg.jobs).unwrap_or(0);

    let config = ReplicationConfig { scenario, reps, fit, jobs };
    let settings = serde_json::json!({
        "scenario": serde_json::to_value(&config.scenario)
            .map_err(|e| Error::Parse(format!("serialising scenario: {e}")))?,
        "reps": reps,
        "jobs": jobs,
        "n_obs": config.fit.n_obs,
        "m": config.fit.m,
        "omega": config.fit.smoothing.omega,
        "mu_tol": config.fit.solver.mu_tol,
        "level": config.fit.level,
    });

    let report = replicate::run(&config)?;

    let mut out = OutDir::create(default_out_dir(args.out_dir, &cfg))?;
    out.write_with("report.json", |buf| io::write_json(buf, &report))?;
    out.write_with("metrics.csv", |buf| io::write_metrics_csv(buf, &report))?;
    out.write_with("estimates.csv", |buf| io::write_estimates_csv(buf, &report))?;
    out.write_with("replicates.csv", |buf| io::write_replicates_csv(buf, &report))?;
    write_manifest(&mut out, &timer, "replicate", Some(config.scenario.seed), settings, &inputs)?;

    print_replication_summary(&report);
    Ok(())
}

fn print_replication_summary(report: &ReplicationReport) {
    println!();
    println!(
        "Replicates: {} of {} usable ({} excluded)",
        report.reps_used,
        report.reps_requested,
        report.excluded.len()
    );
    for e in &report.excluded {
        println!("  excluded replicate {} (seed {}): {}", e.rep, e.seed, e.reason);
    }
    println!(
        "Mean non-cured fraction {:.3}; mean right-censoring proportion {:.3}",
        report.mean_non_cured_fraction, report.mean_right_censoring_proportion
    );
    println!();
    println!(
        "  {:<10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "quantity", "truth", "ABIAS", "MCSD", "AASD", "MSE", "CP"
    );
    for row in report.coefficients.iter().chain(&report.hazard) {
        println!(
            "  {:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.2}",
            row.name, row.truth, row.abias, row.mcsd, row.aasd, row.mse, row.coverage
        );
    }
    println!();
    println!("AISE of the baseline hazard: {:.4}", report.aise);
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

/// Covariate profile file: z/w vectors plus an optional piecewise-constant
/// schedule for the time-varying covariates.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProfileFile {
    z: Vec<f64>,
    w: Vec<f64>,
    tv_times: Vec<f64>,
    tv_values: Vec<Vec<f64>>,
}

fn cmd_predict(args: PredictArgs) -> Result<(), Error> {
    let timer = RunTimer::start();
    let cfg = load_config(args.config.as_deref())?;
    let mut inputs = Vec::new();
    if let Some(path) = args.config.as_deref() {
        inputs.push(InputDigest::new(path, &read_input(path)?));
    }

    let fit_path = args
        .fit
        .clone()
        .or_else(|| cfg.fit.clone())
        .ok_or_else(|| Error::Config("a saved fit is required (--fit FILE)".into()))?;
    let profile_path = args
        .profile
        .clone()
        .or_else(|| cfg.profile.clone())
        .ok_or_else(|| Error::Config("a covariate profile is required (--profile FILE)".into()))?;
    let times = args
        .times
        .clone()
        .or_else(|| cfg.times.clone())
        .ok_or_else(|| Error::Config("prediction times are required (--times T,T,...)".into()))?;
    if times.is_empty() {
        return Err(Error::Config("at least one prediction time is required".into()));
    }
    if let Some(&bad) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(Error::Config(format!("prediction times must be finite and nonnegative, got {bad}")));
    }
    let cap = args.extrapolation_cap.or(cfg.extrapolation_cap).unwrap_or(0.0);
    if !(cap.is_finite() && cap >= 0.0) {
        return Err(Error::Config(format!("--extrapolation-cap must be nonnegative, got {cap}")));
    }

    let fit_bytes = read_input(&fit_path)?;
    inputs.push(InputDigest::new(&fit_path, &fit_bytes));
    let model = io::read_fit_json(fit_bytes.as_slice())?.into_model()?;

    let profile_text = read_input_text(&profile_path)?;
    inputs.push(InputDigest::new(&profile_path, profile_text.as_bytes()));
    let profile: ProfileFile = toml::from_str(&profile_text)
        .map_err(|e| Error::Parse(format!("profile file {}: {e}", profile_path.display())))?;
    let profile = CovariateProfile {
        z: profile.z,
        w: profile.w,
        tv_times: profile.tv_times,
        tv_values: profile.tv_values,
    };

    let points = model.predict(&profile, &times, cap)?;

    let mut out = OutDir::create(default_out_dir(args.out_dir, &cfg))?;
    out.write_with("survival.csv", |buf| io::write_survival_csv(buf, &points))?;
    let settings = serde_json::json!({
        "fit": fit_path.display().to_string(),
        "profile": profile_path.display().to_string(),
        "times": times,
        "extrapolation_cap": cap,
        "level": model.level,
    });
    write_manifest(&mut out, &timer, "predict", None, settings, &inputs)?;

    println!();
    println!("Mixture survival for pi(z) = {:.4}", model.incidence(&profile.z));
    println!("  {:>8} {:>10} {:>10} {:>22}", "t", "survival", "se", "interval");
    for p in &points {
        println!(
            "  {:>8.4} {:>10.4} {:>10.4} {:>22}",
            p.t,
            p.estimate,
            p.se,
            format!("({:.4}, {:.4})", p.lower, p.upper)
        );
    }
    Ok(())
}
