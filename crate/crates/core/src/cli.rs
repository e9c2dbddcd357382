//! Command-line front end: `describe`, `fit`, `diagnose`, `simulate`, `roll`
//! and `compare`.
//!
//! Every subcommand prints an aligned text table. With `--out DIR` it also
//! writes the text, a JSON document and CSV files into `DIR`. Wide CSVs
//! (volatilities, correlations, residuals) use the panel format read by
//! [`crate::data::read_panel`]; `compare` writes a long table with columns
//! `time,series,method,value`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::rolling_covariance;
use crate::data::{self, InputKind, MissingPolicy, ReturnPanel, TimeStamp};
use crate::diagnostics::{
    adequacy_from_residuals, bootstrap_critical_values, BootstrapCriticalValues, CriticalValues, DEFAULT_LAGS,
};
use crate::error::{Error, Result};
use crate::estimator::{
    fit, fit_nested, lr_test, suggest_ties, CorrelationKind, DofSpec, Estimate, FitOptions, FitResult, Leverage,
    LrTestResult, ModelSpec, ParamKind, ParameterAudit, TieSuggestion,
};
use crate::meanmodel::{fit_var, VarMean};
use crate::optim::OptimOptions;
use crate::simulate::{simulate, SimulationConfig};
use crate::volcore::{ModelParams, VolatilityPath};

#[derive(Debug, Parser)]
#[command(
    name = "mvgarch",
    version,
    about = "Multivariate GARCH with hybrid dynamic correlations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Directory for output files; created if missing.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed for simulation, bootstrap and multi-start draws.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output; repeat for debug level.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Descriptive statistics of a return or price file.
    Describe(DescribeArgs),
    /// Joint maximum-likelihood fit.
    Fit(FitArgs),
    /// Ljung-Box adequacy checks on standardized residuals.
    Diagnose(DiagnoseArgs),
    /// Simulate a panel from a model configuration.
    Simulate(SimulateArgs),
    /// Rolling-window covariances and correlations.
    Roll(RollArgs),
    /// Merge model and rolling paths into one long table.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV with a time column followed by one column per asset.
    #[arg(long)]
    pub input: PathBuf,
    /// The input holds prices; convert to simple percentage returns.
    #[arg(long)]
    pub prices: bool,
    /// Drop rows with empty cells instead of failing.
    #[arg(long)]
    pub drop_missing: bool,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Configuration of a nested model; fitted first and tested against the
    /// main one by likelihood ratio.
    #[arg(long)]
    pub restricted: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Output directory of `fit`, or a standardized-residual CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n_boot: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAGS.to_vec())]
    pub lags: Vec<usize>,
    /// Use chi-square critical values instead of the bootstrap.
    #[arg(long)]
    pub asymptotic: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the number of retained observations.
    #[arg(long)]
    pub t: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RollArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 69)]
    pub window: usize,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Output directory of `fit`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory of `roll`.
    #[arg(long)]
    pub roll: PathBuf,
}

// ---------------------------------------------------------------------------
// model configuration

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub mean: MeanSection,
    pub variance: VarianceSection,
    pub correlation: CorrelationSection,
    pub innovation: InnovationSection,
    pub optimizer: OptimizerSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanSection {
    /// VAR order of the mean pre-filter; 0 only demeans.
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceSection {
    pub garch: bool,
    pub leverage: LeverageConfig,
    pub ties: Vec<TieConfig>,
}

impl Default for VarianceSection {
    fn default() -> Self {
        VarianceSection {
            garch: true,
            leverage: LeverageConfig::All(Leverage::Off),
            ties: Vec::new(),
        }
    }
}

/// One setting for every asset, or one per asset.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum LeverageConfig {
    All(Leverage),
    PerAsset(Vec<Leverage>),
}

/// Assets are numbered from 1 in configuration files.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TieConfig {
    pub kind: ParamKind,
    pub assets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationSection {
    pub kind: CorrelationKind,
    /// Innovation window; `k + 2` when absent.
    pub m: Option<usize>,
}

impl Default for CorrelationSection {
    fn default() -> Self {
        CorrelationSection {
            kind: CorrelationKind::Scalar,
            m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnovationSection {
    pub dof: DofConfig,
}

impl Default for InnovationSection {
    fn default() -> Self {
        InnovationSection {
            dof: DofConfig::Word(FreeWord::Free),
        }
    }
}

/// `dof = "free"` or a fixed number.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DofConfig {
    Fixed(f64),
    Word(FreeWord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeWord {
    Free,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    /// Randomly perturbed starts besides the default one.
    pub multi_start: usize,
    pub std_errors: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimOptions::default();
        OptimizerSection {
            max_iter: o.max_iter,
            grad_tol: o.grad_tol,
            rel_tol: o.rel_tol,
            max_step: o.max_step,
            multi_start: 0,
            std_errors: true,
        }
    }
}

fn toml_error(src: &str, e: toml::de::Error) -> Error {
    let line = e.span().map(|s| src[..s.start].matches('\n').count() + 1).unwrap_or(0);
    Error::parse(line, e.message().trim().to_string())
}

impl ModelConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| toml_error(src, e))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Model specification for `k` assets; validated.
    pub fn spec(&self, k: usize) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(k);
        spec.garch = self.variance.garch;
        spec.leverage = match &self.variance.leverage {
            LeverageConfig::All(l) => vec![*l; k],
            LeverageConfig::PerAsset(v) => {
                if v.len() != k {
                    return Err(Error::InvalidConfig(format!(
                        "leverage lists {} assets, data has {k}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        for tie in &self.variance.ties {
            if tie.assets.contains(&0) {
                return Err(Error::InvalidConfig("tie assets are numbered from 1".into()));
            }
            spec = spec.with_tie(tie.kind, tie.assets.iter().map(|a| a - 1).collect());
        }
        spec.correlation = self.correlation.kind;
        if let Some(m) = self.correlation.m {
            spec.m = m;
        }
        spec.dof = match self.innovation.dof {
            DofConfig::Fixed(v) => DofSpec::Fixed(v),
            DofConfig::Word(FreeWord::Free) => DofSpec::Free,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fit_options(&self, seed: u64) -> FitOptions {
        let o = &self.optimizer;
        FitOptions {
            optim: OptimOptions {
                max_iter: o.max_iter,
                grad_tol: o.grad_tol,
                rel_tol: o.rel_tol,
                max_step: o.max_step,
            },
            multi_start: o.multi_start,
            seed,
            std_errors: o.std_errors,
        }
    }
}

/// Reads a simulation configuration; `assets` (optional) names the columns.
pub fn read_simulation_config(src: &str) -> Result<(SimulationConfig, Option<Vec<String>>)> {
    #[derive(Deserialize)]
    struct Names {
        assets: Option<Vec<String>>,
    }
    let config: SimulationConfig = toml::from_str(src).map_err(|e| toml_error(src, e))?;
    let names: Names = toml::from_str(src).map_err(|e| toml_error(src, e))?;
    if let Some(a) = &names.assets {
        if a.len() != config.model.k() {
            return Err(Error::InvalidConfig(format!(
                "{} asset names for a {}-asset model",
                a.len(),
                config.model.k()
            )));
        }
    }
    Ok((config, names.assets))
}

// ---------------------------------------------------------------------------
// entry points

/// Parses `args`, runs the command and returns the process exit code: 0 on
/// success, 2 for usage errors, 3 for input/parse errors, 4 for numerical
/// failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.class().exit_code()
        }
    }
}

/// Runs a parsed command and returns the text report.
pub fn run(cli: &Cli) -> Result<String> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<String> {
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Describe(a) => cmd_describe(a, out),
        Command::Fit(a) => cmd_fit(a, seed, out),
        Command::Diagnose(a) => cmd_diagnose(a, seed, out),
        Command::Simulate(a) => cmd_simulate(a, cli.seed, out),
        Command::Roll(a) => cmd_roll(a, out),
        Command::Compare(a) => cmd_compare(a, out),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPath(path.to_path_buf()))
    }
}

fn load_input(a: &InputArgs) -> Result<ReturnPanel> {
    require(&a.input)?;
    let kind = if a.prices {
        InputKind::Prices
    } else {
        InputKind::Returns
    };
    let missing = if a.drop_missing {
        MissingPolicy::DropRow
    } else {
        MissingPolicy::Reject
    };
    data::read_panel_file(&a.input, kind, missing)
}

fn out_dir(out: Option<&Path>) -> Result<Option<&Path>> {
    if let Some(d) = out {
        fs::create_dir_all(d)?;
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    fs::write(path, s + "\n")?;
    Ok(())
}

fn pair_name(a: &str, b: &str) -> String {
    format!("{a}:{b}")
}

/// Wide CSVs of conditional standard deviations and pairwise correlations.
fn write_path_csvs(dir: &Path, assets: &[String], times: &[TimeStamp], path: &VolatilityPath) -> Result<()> {
    let vol = ReturnPanel::new(assets.to_vec(), times.to_vec(), path.d.clone())?;
    data::write_panel_file(&dir.join("volatility.csv"), &vol)?;
    let k = assets.len();
    if k > 1 {
        let (names, corr) = correlation_columns(assets, path.r.iter().map(|r| r.as_matrix()));
        let panel = ReturnPanel::new(names, times.to_vec(), corr)?;
        data::write_panel_file(&dir.join("correlation.csv"), &panel)?;
    }
    Ok(())
}

fn correlation_columns<'a>(
    assets: &[String],
    rs: impl ExactSizeIterator<Item = &'a DMatrix<f64>>,
) -> (Vec<String>, DMatrix<f64>) {
    let k = assets.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let names = pairs.iter().map(|&(i, j)| pair_name(&assets[i], &assets[j])).collect();
    let n = rs.len();
    let mut m = DMatrix::zeros(n, pairs.len());
    for (t, r) in rs.enumerate() {
        for (c, &(i, j)) in pairs.iter().enumerate() {
            m[(t, c)] = r[(i, j)];
        }
    }
    (names, m)
}

// ---------------------------------------------------------------------------
// describe

fn cmd_describe(a: &DescribeArgs, out: Option<&Path>) -> Result<String> {
    let panel = load_input(&a.input)?;
    let stats = data::describe(&panel)?;
    let text = format!("{stats}\n");
    if let Some(dir) = out_dir(out)? {
        fs::write(dir.join("describe.txt"), &text)?;
        write_json(&dir.join("describe.json"), &stats)?;
        stats.write_csv(fs::File::create(dir.join("describe.csv"))?)?;
    }
    Ok(text)
}

// ---------------------------------------------------------------------------
// fit

/// Everything `fit` writes to `fit.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub assets: Vec<String>,
    pub var_order: usize,
    pub mean: VarMean,
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub estimates: Vec<Estimate>,
    pub std_error_note: Option<String>,
    pub lmax: f64,
    pub audit: ParameterAudit,
    pub n_obs: usize,
    pub first_likelihood_row: usize,
    pub iterations: usize,
    pub converged: bool,
    pub boundary: bool,
    pub tie_suggestions: Vec<TieSuggestion>,
    pub restricted: Option<RestrictedSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestrictedSummary {
    pub spec: ModelSpec,
    pub estimates: Vec<Estimate>,
    pub lmax: f64,
    pub audit: ParameterAudit,
    pub lr_test: LrTestResult,
}

fn estimate_cell(e: &Estimate) -> String {
    match e.std_error {
        Some(se) => format!("{:.4} ({:.4})", e.value, se),
        None => format!("{:.4} (n/a)", e.value),
    }
}

/// Parameter table with standard errors in parentheses.
pub fn render_fit(summary: &FitSummary) -> String {
    let mut s = String::new();
    let k = summary.assets.len();
    let _ = writeln!(
        s,
        "Estimation results: k = {k}, {} observations in the likelihood, VAR({}) mean",
        summary.n_obs - summary.first_likelihood_row,
        summary.var_order
    );
    let legend: Vec<String> = summary
        .assets
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}={a}", i + 1))
        .collect();
    let _ = writeln!(s, "assets: {}", legend.join(", "));
    let _ = writeln!(s, "{:<20} {:>22}", "parameter", "estimate (s.e.)");
    let mut rows: Vec<&Estimate> = summary.estimates.iter().collect();
    rows.sort_by_key(|e| e.group.kind);
    for e in rows {
        let _ = writeln!(s, "{:<20} {:>22}", e.group.to_string(), estimate_cell(e));
    }
    if let Some(note) = &summary.std_error_note {
        let _ = writeln!(s, "standard errors: {note}");
    }
    let _ = writeln!(s, "L_max = {:.2}", summary.lmax);
    let _ = writeln!(s, "{}", summary.audit);
    let status = match (summary.converged, summary.boundary) {
        (_, true) => "optimum on the boundary (nested model value)",
        (true, false) => "converged",
        (false, false) => "not converged",
    };
    let _ = writeln!(s, "optimizer: {status} after {} iterations", summary.iterations);
    if !summary.tie_suggestions.is_empty() {
        let _ = writeln!(s, "possible equality constraints (not applied):");
        for t in &summary.tie_suggestions {
            let _ = writeln!(s, "  {t}");
        }
    }
    if let Some(r) = &summary.restricted {
        let _ = writeln!(s, "restricted model: L_max = {:.2}, {}", r.lmax, r.audit);
        let _ = writeln!(s, "{}", r.lr_test);
    }
    s
}

fn summarize(
    assets: &[String],
    p: usize,
    mean: VarMean,
    r: &FitResult,
    restricted: Option<RestrictedSummary>,
) -> FitSummary {
    FitSummary {
        assets: assets.to_vec(),
        var_order: p,
        mean,
        spec: r.spec.clone(),
        params: r.params.clone(),
        estimates: r.estimates.clone(),
        std_error_note: r.std_error_note.clone(),
        lmax: r.lmax,
        audit: r.audit,
        n_obs: r.n_obs,
        first_likelihood_row: r.t0,
        iterations: r.n_iterations,
        converged: r.converged,
        boundary: r.boundary,
        tie_suggestions: suggest_ties(r),
        restricted,
    }
}

fn cmd_fit(a: &FitArgs, seed: u64, out: Option<&Path>) -> Result<String> {
    let config = match &a.config {
        Some(p) => {
            require(p)?;
            ModelConfig::from_file(p)?
        }
        None => ModelConfig::default(),
    };
    let restricted_config = match &a.restricted {
        Some(p) => {
            require(p)?;
            Some(ModelConfig::from_file(p)?)
        }
        None => None,
    };
    let panel = load_input(&a.input)?;
    let k = panel.k();
    let spec = config.spec(k)?;
    let options = config.fit_options(seed);
    let p = config.mean.p;
    let var = fit_var(panel.values(), p)?;
    let e = &var.residuals;
    let times = &panel.times()[p..];

    let (result, restricted) = match &restricted_config {
        Some(rc) => {
            let rspec = rc.spec(k)?;
            if !spec.nests(&rspec) {
                return Err(Error::NotNested(
                    "the restricted configuration is not a special case of the main one".into(),
                ));
            }
            let small = fit(&rspec, e, &rc.fit_options(seed))?;
            let big = fit_nested(&spec, e, &small, &options)?;
            let lr = lr_test(&big, &small)?;
            let rs = RestrictedSummary {
                spec: small.spec.clone(),
                estimates: small.estimates.clone(),
                lmax: small.lmax,
                audit: small.audit,
                lr_test: lr,
            };
            (big, Some(rs))
        }
        None => (fit(&spec, e, &options)?, None),
    };
    if !result.converged {
        log::warn!(
            "optimizer stopped after {} iterations without converging",
            result.n_iterations
        );
    }
    let summary = summarize(panel.assets(), p, var.mean(), &result, restricted);
    let text = render_fit(&summary);
    if let Some(dir) = out_dir(out)? {
        fs::write(dir.join("fit.txt"), &text)?;
        write_json(&dir.join("fit.json"), &summary)?;
        write_path_csvs(dir, panel.assets(), times, &result.path)?;
        let resid = ReturnPanel::new(
            panel.assets().to_vec(),
            times[result.t0..].to_vec(),
            result.residuals_std.clone(),
        )?;
        data::write_panel_file(&dir.join("residuals.csv"), &resid)?;
    }
    Ok(text)
}

// ---------------------------------------------------------------------------
// diagnose

#[derive(Debug, Clone, Serialize)]
struct DiagnoseOutput<'a> {
    report: &'a crate::diagnostics::AdequacyReport,
    bootstrap: Option<&'a BootstrapCriticalValues>,
}

fn cmd_diagnose(a: &DiagnoseArgs, seed: u64, out: Option<&Path>) -> Result<String> {
    require(&a.input)?;
    let path = if a.input.is_dir() {
        a.input.join("residuals.csv")
    } else {
        a.input.clone()
    };
    require(&path)?;
    let panel = data::read_panel_file(&path, InputKind::Returns, MissingPolicy::Reject)?;
    let crits = if a.asymptotic {
        CriticalValues::Asymptotic
    } else {
        CriticalValues::Bootstrap(bootstrap_critical_values(panel.values(), &a.lags, a.n_boot, seed)?)
    };
    let report = adequacy_from_residuals(panel.values(), &a.lags, &crits)?;
    let text = format!("{report}\n");
    if let Some(dir) = out_dir(out)? {
        fs::write(dir.join("diagnose.txt"), &text)?;
        let boot = match &crits {
            CriticalValues::Bootstrap(b) => Some(b),
            CriticalValues::Asymptotic => None,
        };
        write_json(
            &dir.join("diagnose.json"),
            &DiagnoseOutput {
                report: &report,
                bootstrap: boot,
            },
        )?;
    }
    Ok(text)
}

// ---------------------------------------------------------------------------
// simulate

fn cmd_simulate(a: &SimulateArgs, seed: Option<u64>, out: Option<&Path>) -> Result<String> {
    require(&a.config)?;
    let src = fs::read_to_string(&a.config)?;
    let (mut config, names) = read_simulation_config(&src)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(t) = a.t {
        config.t = t;
    }
    let sim = simulate(&config)?;
    let panel = match names {
        Some(n) => ReturnPanel::new(n, sim.panel.times().to_vec(), sim.panel.values().clone())?,
        None => sim.panel.clone(),
    };
    match out_dir(out)? {
        Some(dir) => {
            data::write_panel_file(&dir.join("panel.csv"), &panel)?;
            write_path_csvs(dir, panel.assets(), panel.times(), &sim.path)?;
            Ok(format!(
                "simulated {} observations of {} assets (seed {}, burn-in {})\n",
                panel.len(),
                panel.k(),
                config.seed,
                config.burn_in
            ))
        }
        None => {
            let mut buf = Vec::new();
            data::write_panel(&mut buf, &panel)?;
            Ok(String::from_utf8(buf).expect("csv output is utf-8"))
        }
    }
}

// ---------------------------------------------------------------------------
// roll

fn cmd_roll(a: &RollArgs, out: Option<&Path>) -> Result<String> {
    let panel = load_input(&a.input)?;
    let t_len = panel.len();
    if a.window >= t_len {
        return Err(Error::WindowTooLong {
            window: a.window,
            len: t_len,
        });
    }
    let covs = rolling_covariance(panel.values(), a.window)?;
    // the window ending at t - 1 is the forecast for t
    let n = t_len - a.window;
    let times = panel.times()[a.window..].to_vec();
    let k = panel.k();
    let assets = panel.assets();
    let mut sd = DMatrix::zeros(n, k);
    let mut corr = Vec::with_capacity(n);
    let mut cov_names = Vec::new();
    for i in 0..k {
        for j in i..k {
            cov_names.push(pair_name(&assets[i], &assets[j]));
        }
    }
    let mut cov = DMatrix::zeros(n, cov_names.len());
    for (t, c) in covs.iter().take(n).enumerate() {
        let m = c.as_matrix();
        let mut col = 0;
        for i in 0..k {
            sd[(t, i)] = m[(i, i)].sqrt();
            for j in i..k {
                cov[(t, col)] = m[(i, j)];
                col += 1;
            }
        }
        corr.push(DMatrix::from_fn(k, k, |i, j| {
            m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt()
        }));
    }
    let mut text = format!(
        "rolling window {}: {} estimates from {} to {}\n",
        a.window,
        n,
        times[0],
        times[n - 1]
    );
    let last = &covs[n - 1];
    let _ = writeln!(text, "last window standard deviations:");
    for (i, name) in assets.iter().enumerate() {
        let _ = writeln!(text, "  {name:<12} {:.4}", last.get(i, i).sqrt());
    }
    if let Some(dir) = out_dir(out)? {
        let vol = ReturnPanel::new(assets.to_vec(), times.clone(), sd)?;
        data::write_panel_file(&dir.join("volatility.csv"), &vol)?;
        if k > 1 {
            let (names, cm) = correlation_columns(assets, corr.iter());
            data::write_panel_file(
                &dir.join("correlation.csv"),
                &ReturnPanel::new(names, times.clone(), cm)?,
            )?;
        }
        data::write_panel_file(&dir.join("covariance.csv"), &ReturnPanel::new(cov_names, times, cov)?)?;
        fs::write(dir.join("roll.txt"), &text)?;
    }
    Ok(text)
}

// ---------------------------------------------------------------------------
// compare

/// One row of the long comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub time: String,
    pub series: String,
    pub method: String,
    pub value: f64,
}

fn read_wide(path: &Path) -> Result<ReturnPanel> {
    require(path)?;
    data::read_panel_file(path, InputKind::Returns, MissingPolicy::Reject)
}

/// Model and rolling columns restricted to their common time stamps.
fn merge(
    prefix: &str,
    model: &ReturnPanel,
    rolling: &ReturnPanel,
    rows: &mut Vec<CompareRow>,
) -> Result<(usize, usize)> {
    if model.assets() != rolling.assets() {
        return Err(Error::InvalidPanel(format!(
            "{prefix} columns differ: {:?} vs {:?}",
            model.assets(),
            rolling.assets()
        )));
    }
    let mut i = 0;
    let mut j = 0;
    let mut common = 0;
    let (mt, rt) = (model.times(), rolling.times());
    while i < mt.len() && j < rt.len() {
        match mt[i].cmp(&rt[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                for (c, name) in model.assets().iter().enumerate() {
                    let series = format!("{prefix}:{name}");
                    for (method, v) in [("model", model.values()[(i, c)]), ("rolling", rolling.values()[(j, c)])] {
                        rows.push(CompareRow {
                            time: mt[i].to_string(),
                            series: series.clone(),
                            method: method.into(),
                            value: v,
                        });
                    }
                }
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok((common, mt.len().max(rt.len())))
}

fn cmd_compare(a: &CompareArgs, out: Option<&Path>) -> Result<String> {
    let mut rows = Vec::new();
    let mut text = String::new();
    let mut files = vec![("sd", "volatility.csv")];
    if a.input.join("correlation.csv").exists() || a.roll.join("correlation.csv").exists() {
        files.push(("rho", "correlation.csv"));
    }
    for (prefix, file) in files {
        let model = read_wide(&a.input.join(file))?;
        let rolling = read_wide(&a.roll.join(file))?;
        let (common, longest) = merge(prefix, &model, &rolling, &mut rows)?;
        if common == 0 {
            return Err(Error::EmptyIntersection);
        }
        if common < longest {
            log::warn!("{file}: trimmed to {common} common time stamps (longest input has {longest})");
        }
        let _ = writeln!(
            text,
            "{file}: {common} common time stamps ({} model, {} rolling)",
            model.len(),
            rolling.len()
        );
    }
    let _ = writeln!(text, "{} rows in the long table", rows.len());
    if let Some(dir) = out_dir(out)? {
        let mut w = csv::Writer::from_path(dir.join("compare.csv")).map_err(data::csv_err)?;
        for r in &rows {
            w.serialize(r).map_err(data::csv_err)?;
        }
        w.flush()?;
        fs::write(dir.join("compare.txt"), &text)?;
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_the_base_model() {
        let c = ModelConfig::from_toml("").unwrap();
        assert_eq!(c.spec(3).unwrap(), ModelSpec::new(3));
        assert_eq!(c.fit_options(4).seed, 4);
    }

    #[test]
    fn full_config_parses() {
        let src = r#"
[mean]
p = 3

[variance]
garch = true
leverage = "free"
ties = [
  { kind = "lambda0", assets = [1, 2] },
  { kind = "lambda2", assets = [3, 4] },
]

[correlation]
kind = "diagonal"
m = 8

[innovation]
dof = 7.5

[optimizer]
max_iter = 300
multi_start = 2
std_errors = false
"#;
        let c = ModelConfig::from_toml(src).unwrap();
        assert_eq!(c.mean.p, 3);
        let spec = c.spec(4).unwrap();
        assert_eq!(spec.leverage, vec![Leverage::Free; 4]);
        assert_eq!(spec.ties[0].assets, vec![0, 1]);
        assert_eq!(spec.ties[1].kind, ParamKind::Lambda2);
        assert_eq!(spec.correlation, CorrelationKind::Diagonal);
        assert_eq!(spec.m, 8);
        assert_eq!(spec.dof, DofSpec::Fixed(7.5));
        let o = c.fit_options(0);
        assert_eq!(o.optim.max_iter, 300);
        assert_eq!(o.multi_start, 2);
        assert!(!o.std_errors);
    }

    #[test]
    fn per_asset_leverage() {
        let c = ModelConfig::from_toml("[variance]\nleverage = [\"off\", \"igarch\"]\n").unwrap();
        assert_eq!(c.spec(2).unwrap().leverage, vec![Leverage::Off, Leverage::Igarch]);
        assert!(matches!(c.spec(3), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn config_errors_carry_lines() {
        let err = ModelConfig::from_toml("[mean]\np = 1\n\n[variance]\nlevrage = \"free\"\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 5),
            e => panic!("{e:?}"),
        }
        let err = ModelConfig::from_toml("[innovation]\ndof = \"sometimes\"\n").unwrap_err();
        assert_eq!(err.class().exit_code(), 3);
        let zero = ModelConfig::from_toml("[variance]\nties = [{ kind = \"lambda1\", assets = [0, 1] }]\n").unwrap();
        assert_eq!(zero.spec(2).unwrap_err().class().exit_code(), 2);
    }

    #[test]
    fn simulation_config_round_trip() {
        let src = r#"
t = 50
assets = ["x", "y"]

[model]
kind = "proposed"
lambda0 = [0.05, 0.05]
lambda1 = [0.9, 0.9]
lambda2 = [0.05, 0.05]
theta = { theta1 = 0.02, theta2 = 0.95 }
dof = 8.0
m = 4
rbar = [[1.0, 0.4], [0.4, 1.0]]
"#;
        let (c, names) = read_simulation_config(src).unwrap();
        assert_eq!(c.burn_in, 500);
        assert_eq!(c.seed, 0);
        assert_eq!(names.unwrap(), vec!["x", "y"]);
        assert!(simulate(&c).is_ok());
    }

    #[test]
    fn render_marks_missing_errors() {
        let e = Estimate {
            group: crate::estimator::ParamGroup {
                kind: ParamKind::Lambda1,
                assets: vec![0],
            },
            value: 0.9,
            std_error: None,
        };
        assert_eq!(estimate_cell(&e), "0.9000 (n/a)");
    }
}
