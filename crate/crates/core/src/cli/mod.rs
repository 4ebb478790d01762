//! Command-line front end: JSON configuration, the simulate / allocate /
//! sensitivity / default-fund / validate-loss pipeline, and plot data.

mod config;

pub use config::{
    AlphaProfileConfig, EstimatorKind, Format, Generator, ModelConfig, OutputConfig, PlotsConfig, RunConfig,
    SensitivityConfig, SensitivityKind, ShockSpec, SolverConfig, SrcGridConfig, Surrogate,
};

use crate::defaultfund::{default_fund_report, DefaultFundReport};
use crate::error::{MsraError, Result};
use crate::estimators::{ChebyshevEstimator, ConstraintModel, MonteCarloEstimator, QuadratureOracle, SurrogateOptions};
use crate::loss::{validate_loss, Family, LossSpec, ValidationReport};
use crate::scenario::{simulate_gaussian, ColumnSummary, GaussianModel, ScenarioSet};
use crate::sensitivity::{
    alpha_closed_form, alpha_finite_difference, alpha_sensitivity, shock_finite_difference, shock_sensitivity,
    src_grid, SensitivityResult,
};
use crate::solver::{solve_allocation, AllocationResult, SolverOptions};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(name = "msra", version, about = "Multivariate shortfall risk allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads (overrides the config and MSRA_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output format for tables.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate scenarios and write the binary container.
    Simulate(Common),
    /// Solve for the optimal allocation.
    Allocate(Common),
    /// Marginal risk and allocation sensitivities, plus plot data.
    Sensitivity(SensitivityArgs),
    /// Default-fund weights under initial margin and shortfall rules.
    DefaultFund(Common),
    /// Check the loss-function axioms numerically.
    ValidateLoss(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Binary scenario file; simulated from the config when absent.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub common: Common,
    /// Allocation JSON from `allocate`; solved again when absent.
    #[arg(long)]
    pub allocation: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub path: PathBuf,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub model_tag: String,
    pub columns: Vec<ColumnSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub labels: Vec<String>,
    pub estimator: EstimatorKind,
    pub surrogate: Surrogate,
    pub n_scenarios: usize,
    pub seed: u64,
    pub model_tag: String,
    #[serde(flatten)]
    pub result: AllocationResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub labels: Vec<String>,
    pub risk: f64,
    pub m_star: Vec<f64>,
    pub lambda_star: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shock: Option<SensitivityResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<SensitivityResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub command: String,
    pub wall_time_ms: f64,
    pub simulate_ms: f64,
    pub solve_ms: f64,
}

/// Parses the arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(c) => cmd_simulate(cli, c),
        Command::Allocate(c) => cmd_allocate(cli, c),
        Command::Sensitivity(a) => cmd_sensitivity(cli, a),
        Command::DefaultFund(c) => cmd_default_fund(cli, c),
        Command::ValidateLoss(a) => cmd_validate_loss(cli, a),
    }
}

struct Context {
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
    format: Format,
}

fn context(cli: &Cli, config: &Path, out: Option<&PathBuf>) -> Result<Context> {
    let cfg = RunConfig::load(config)?;
    set_threads(cli.threads.or(cfg.threads))?;
    let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = match out {
        Some(o) => o.clone(),
        None if cfg.output.dir.is_absolute() => cfg.output.dir.clone(),
        None => base.join(&cfg.output.dir),
    };
    std::fs::create_dir_all(&out)?;
    let format = cli.format.unwrap_or(cfg.output.format);
    Ok(Context { cfg, base, out, format })
}

/// Sizes the global pool once; later calls keep the first setting.
fn set_threads(requested: Option<usize>) -> Result<()> {
    let env = std::env::var("MSRA_THREADS").ok();
    let n = match (requested, env) {
        (Some(n), _) => Some(n),
        (None, Some(v)) => Some(
            v.parse::<usize>()
                .map_err(|_| MsraError::invalid(format!("MSRA_THREADS must be a positive integer, got {v:?}")))?,
        ),
        (None, None) => None,
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(MsraError::invalid("thread count must be positive"));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialized");
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn scenarios(ctx: &Context, path: Option<&PathBuf>, generator: &Generator) -> Result<Arc<ScenarioSet>> {
    let x = match path {
        Some(p) => ScenarioSet::read_binary(p)?,
        None => generator.simulate(ctx.cfg.solver.n_scenarios, ctx.cfg.solver.seed)?,
    };
    Ok(Arc::new(x))
}

fn cmd_simulate(cli: &Cli, c: &Common) -> Result<()> {
    let ctx = context(cli, &c.config, c.out.as_ref())?;
    let generator = ctx.cfg.model.build(&ctx.base)?;
    let x = generator.simulate(ctx.cfg.solver.n_scenarios, ctx.cfg.solver.seed)?;
    let path = ctx.out.join("scenarios.msra");
    x.write_binary(&path)?;
    if ctx.format == Format::Csv {
        x.write_csv(ctx.out.join("scenarios.csv"))?;
    }
    let summary = SimulationSummary {
        path,
        n: x.n(),
        d: x.d(),
        seed: x.seed(),
        model_tag: x.model_tag().to_string(),
        columns: x.column_summary(),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// The constraint model selected by the solver section.
fn build_model(cfg: &RunConfig, generator: &Generator, x: Option<&Arc<ScenarioSet>>) -> Result<Box<dyn ConstraintModel>> {
    let loss = cfg.require_loss()?.clone();
    match cfg.solver.estimator {
        EstimatorKind::Quadrature => match generator {
            Generator::Gaussian(m) => Ok(Box::new(QuadratureOracle::new(m, loss)?)),
            Generator::Copula(_) => Err(MsraError::Unsupported("quadrature needs a gaussian model".into())),
        },
        EstimatorKind::MonteCarlo => {
            let x = x.ok_or_else(|| MsraError::invalid("Monte Carlo estimator needs scenarios"))?;
            let mc = MonteCarloEstimator::new(x.clone(), loss)?;
            match cfg.solver.surrogate {
                Surrogate::Off => Ok(Box::new(mc)),
                Surrogate::Nodes(n) => Ok(Box::new(ChebyshevEstimator::fit(mc, &SurrogateOptions::with_nodes(n))?)),
            }
        }
    }
}

fn allocate(ctx: &Context, c: &Common) -> Result<(AllocationReport, Option<Arc<ScenarioSet>>, Timing)> {
    let start = Instant::now();
    let generator = ctx.cfg.model.build(&ctx.base)?;
    let x = match ctx.cfg.solver.estimator {
        EstimatorKind::MonteCarlo => Some(scenarios(ctx, c.scenarios.as_ref(), &generator)?),
        EstimatorKind::Quadrature => None,
    };
    let simulate_ms = ms(start);
    let t = Instant::now();
    let model = build_model(&ctx.cfg, &generator, x.as_ref())?;
    let result = solve_allocation(model.as_ref(), &ctx.cfg.solver.options())?;
    let solve_ms = ms(t);
    let (n, seed, tag) = match &x {
        Some(x) => (x.n(), x.seed(), x.model_tag().to_string()),
        None => (0, ctx.cfg.solver.seed, "quadrature".to_string()),
    };
    let report = AllocationReport {
        labels: generator.labels(),
        estimator: ctx.cfg.solver.estimator,
        surrogate: ctx.cfg.solver.surrogate,
        n_scenarios: n,
        seed,
        model_tag: tag,
        result,
    };
    let timing = Timing { command: String::new(), wall_time_ms: ms(start), simulate_ms, solve_ms };
    Ok((report, x, timing))
}

fn cmd_allocate(cli: &Cli, c: &Common) -> Result<()> {
    let ctx = context(cli, &c.config, c.out.as_ref())?;
    let (report, _, mut timing) = allocate(&ctx, c)?;
    write_json(&ctx.out.join("allocation.json"), &report)?;
    if ctx.format == Format::Csv {
        let mut w = csv::Writer::from_path(ctx.out.join("allocation.csv"))?;
        w.write_record(["component", "m_star", "allocation_se"])?;
        for (k, label) in report.labels.iter().enumerate() {
            let se = report.result.allocation_se.as_ref().map_or(String::new(), |s| s[k].to_string());
            w.write_record([label.clone(), report.result.m_star[k].to_string(), se])?;
        }
        w.flush()?;
    }
    timing.command = "allocate".into();
    write_json(&ctx.out.join("timing.json"), &timing)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn shock_set(spec: &ShockSpec, x: &ScenarioSet, base: &Path) -> Result<ScenarioSet> {
    match spec {
        ShockSpec::Same => Ok(x.clone()),
        ShockSpec::IndependentNormal { mean, std, seed } => {
            if mean.len() != x.d() || std.len() != x.d() {
                return Err(MsraError::DimensionMismatch { expected: x.d(), got: mean.len().max(std.len()) });
            }
            let cov: Vec<Vec<f64>> = (0..x.d())
                .map(|i| (0..x.d()).map(|j| if i == j { std[i] * std[i] } else { 0.0 }).collect())
                .collect();
            simulate_gaussian(&GaussianModel::from_rows(mean, &cov)?, x.n(), *seed)
        }
        ShockSpec::File { path } => ScenarioSet::read_binary(base.join(path)),
    }
}

fn cmd_sensitivity(cli: &Cli, a: &SensitivityArgs) -> Result<()> {
    let c = &a.common;
    let ctx = context(cli, &c.config, c.out.as_ref())?;
    if ctx.cfg.solver.estimator != EstimatorKind::MonteCarlo {
        return Err(MsraError::Unsupported("sensitivities need the Monte Carlo estimator".into()));
    }
    let start = Instant::now();
    let generator = ctx.cfg.model.build(&ctx.base)?;
    let x = scenarios(&ctx, c.scenarios.as_ref(), &generator)?;
    let simulate_ms = ms(start);
    let t = Instant::now();
    let opts = ctx.cfg.solver.options();
    let est = MonteCarloEstimator::new(x.clone(), ctx.cfg.require_loss()?.clone())?;
    let alloc = match &a.allocation {
        Some(p) => {
            let r: AllocationReport = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            if r.result.m_star.len() != x.d() {
                return Err(MsraError::DimensionMismatch { expected: x.d(), got: r.result.m_star.len() });
            }
            r.result
        }
        None => solve_allocation(&est, &opts)?,
    };
    let sens = ctx.cfg.sensitivity.clone().unwrap_or(SensitivityConfig {
        shock: Some(ShockSpec::Same),
        alpha: false,
        method: SensitivityKind::LinearSystem,
        fd_step: 1e-3,
    });
    let shock = match &sens.shock {
        Some(spec) => {
            let y = shock_set(spec, &x, &ctx.base)?;
            Some(match sens.method {
                SensitivityKind::LinearSystem => shock_sensitivity(&est, &alloc, &y)?,
                SensitivityKind::FiniteDifference => shock_finite_difference(&est, &y, &opts, sens.fd_step)?,
            })
        }
        None => None,
    };
    let alpha = if sens.alpha {
        Some(match sens.method {
            SensitivityKind::LinearSystem => alpha_sensitivity(&est, &alloc)?,
            SensitivityKind::FiniteDifference => alpha_finite_difference(&est, &opts, sens.fd_step)?,
        })
    } else {
        None
    };
    let report = SensitivityReport {
        labels: generator.labels(),
        risk: alloc.risk,
        m_star: alloc.m_star.clone(),
        lambda_star: alloc.lambda_star,
        shock,
        alpha,
    };
    write_json(&ctx.out.join("sensitivity.json"), &report)?;
    if let Some(plots) = &ctx.cfg.plots {
        write_plots(plots, &ctx.out)?;
    }
    let timing = Timing { command: "sensitivity".into(), wall_time_ms: ms(start), simulate_ms, solve_ms: ms(t) };
    write_json(&ctx.out.join("timing.json"), &timing)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// `src_grid.csv` (one column per correlation) and `alpha_profile.csv`.
pub fn write_plots(plots: &PlotsConfig, out: &Path) -> Result<()> {
    if let Some(g) = &plots.src_grid {
        let sigma1 = linspace(g.sigma1_min, g.sigma1_max, g.steps)?;
        let grid = src_grid(&sigma1, &g.rhos, g.sigma2, g.alpha);
        let mut w = csv::Writer::from_path(out.join("src_grid.csv"))?;
        let mut header = vec!["sigma1".to_string()];
        header.extend(g.rhos.iter().map(|r| format!("rho={r}")));
        w.write_record(&header)?;
        for (s, row) in sigma1.iter().zip(&grid) {
            let mut rec = vec![s.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    if let Some(p) = &plots.alpha_profile {
        let mut w = csv::Writer::from_path(out.join("alpha_profile.csv"))?;
        w.write_record([
            "rho", "d_risk", "d_ra1", "d_ra2", "d_ra3", "closed_d_risk", "closed_d_ra1", "closed_d_ra2", "closed_d_ra3",
        ])?;
        for (lin, closed, rho) in alpha_profile(p)? {
            let mut rec = vec![rho.to_string(), lin.marginal_risk.to_string()];
            rec.extend(lin.marginal_alloc.iter().map(f64::to_string));
            rec.push(closed.marginal_risk.to_string());
            rec.extend(closed.marginal_alloc.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Linear-system and closed-form `α`-derivatives at `α = 0` per
/// correlation.
pub fn alpha_profile(p: &AlphaProfileConfig) -> Result<Vec<(SensitivityResult, SensitivityResult, f64)>> {
    let loss = LossSpec::new(Family::QuadraticSystemic { alpha: 0.0, linear: false }, 3)?;
    p.rhos
        .iter()
        .map(|&rho| {
            let corr = vec![vec![1.0, rho, 0.0], vec![rho, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
            let model = GaussianModel::from_correlation(&[1.0; 3], &corr)?;
            let x = Arc::new(simulate_gaussian(&model, p.n_scenarios, p.seed)?);
            let est = MonteCarloEstimator::new(x, loss.clone())?;
            let alloc = solve_allocation(&est, &SolverOptions::default())?;
            let lin = alpha_sensitivity(&est, &alloc)?;
            let (_, closed) = alpha_closed_form(&est, &alloc)?;
            Ok((lin, closed, rho))
        })
        .collect()
}

fn linspace(a: f64, b: f64, steps: usize) -> Result<Vec<f64>> {
    if steps < 2 || !(b > a) {
        return Err(MsraError::invalid("grid needs at least two steps over a nonempty range"));
    }
    Ok((0..steps).map(|i| a + (b - a) * i as f64 / (steps - 1) as f64).collect())
}

fn cmd_default_fund(cli: &Cli, c: &Common) -> Result<()> {
    let ctx = context(cli, &c.config, c.out.as_ref())?;
    let start = Instant::now();
    let generator = ctx.cfg.model.build(&ctx.base)?;
    let x = scenarios(&ctx, c.scenarios.as_ref(), &generator)?;
    let simulate_ms = ms(start);
    let t = Instant::now();
    let labels = generator.labels();
    if labels.len() != x.d() {
        return Err(MsraError::DimensionMismatch { expected: labels.len(), got: x.d() });
    }
    let df = ctx.cfg.default_fund.clone().unwrap_or_default();
    let report: DefaultFundReport = default_fund_report(&x, &labels, &df, &ctx.cfg.solver.options())?;
    write_json(&ctx.out.join("default_fund.json"), &report)?;
    report.write_csv_file(ctx.out.join("default_fund_weights.csv"))?;
    let timing = Timing { command: "default-fund".into(), wall_time_ms: ms(start), simulate_ms, solve_ms: ms(t) };
    write_json(&ctx.out.join("timing.json"), &timing)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_validate_loss(cli: &Cli, a: &ValidateArgs) -> Result<()> {
    let ctx = context(cli, &a.config, a.out.as_ref())?;
    let loss = ctx.cfg.require_loss()?;
    let report: ValidationReport = validate_loss(loss, a.samples, ctx.cfg.solver.seed);
    write_json(&ctx.out.join("validation.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.passed {
        return Err(MsraError::invalid(format!("{} failed validation", loss.family_name())));
    }
    Ok(())
}
