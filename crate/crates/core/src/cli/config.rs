use crate::defaultfund::{synthetic_book, DefaultFundConfig};
use crate::error::{MsraError, Result};
use crate::loss::LossSpec;
use crate::scenario::{load_positions, simulate_gaussian, simulate_student_copula, GaussianModel, ScenarioSet, StudentCopulaModel};
use crate::solver::{Method, SolverOptions};
use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::path::{Path, PathBuf};

/// One run of the command-line tool. Unknown keys are rejected at every
/// level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_fund: Option<DefaultFundConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plots: Option<PlotsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Either `covariance` or `sigma` with `correlation`; `mean` defaults
    /// to zero.
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariance: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        correlation: Option<Vec<Vec<f64>>>,
    },
    StudentCopula {
        copula_dof: f64,
        correlation: Vec<Vec<f64>>,
        marginal_dof: Vec<f64>,
        fudge: Vec<f64>,
        spot: Vec<f64>,
        /// Positions CSV, relative to the config file.
        positions: PathBuf,
    },
    SyntheticBook {
        #[serde(default = "ten")]
        members: usize,
        #[serde(default = "five")]
        underlyings: usize,
        #[serde(default = "six")]
        copula_dof: f64,
        #[serde(default = "one")]
        book_seed: u64,
    },
}

fn ten() -> usize {
    10
}
fn five() -> usize {
    5
}
fn six() -> f64 {
    6.0
}
fn one() -> u64 {
    1
}

/// A built scenario generator.
pub enum Generator {
    Gaussian(GaussianModel),
    Copula(StudentCopulaModel),
}

impl Generator {
    pub fn simulate(&self, n: usize, seed: u64) -> Result<ScenarioSet> {
        match self {
            Generator::Gaussian(m) => simulate_gaussian(m, n, seed),
            Generator::Copula(m) => simulate_student_copula(m, n, seed),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            Generator::Gaussian(m) => (1..=m.dim()).map(|k| format!("X{k}")).collect(),
            Generator::Copula(m) => m.positions.members.clone(),
        }
    }
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(MsraError::invalid(format!("{name} must be a square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ModelConfig {
    /// `base` is the directory relative paths are resolved against.
    pub fn build(&self, base: &Path) -> Result<Generator> {
        match self {
            ModelConfig::Gaussian { mean, covariance, sigma, correlation } => {
                let model = match (covariance, sigma, correlation) {
                    (Some(cov), None, None) => {
                        let mean = mean.clone().unwrap_or_else(|| vec![0.0; cov.len()]);
                        GaussianModel::from_rows(&mean, cov)?
                    }
                    (None, Some(s), Some(c)) => {
                        let model = GaussianModel::from_correlation(s, c)?;
                        match mean {
                            Some(mu) => GaussianModel::new(nalgebra::DVector::from_column_slice(mu), model.covariance().clone())?,
                            None => model,
                        }
                    }
                    _ => {
                        return Err(MsraError::invalid(
                            "gaussian model needs either covariance or sigma with correlation",
                        ))
                    }
                };
                Ok(Generator::Gaussian(model))
            }
            ModelConfig::StudentCopula { copula_dof, correlation, marginal_dof, fudge, spot, positions } => {
                let positions = load_positions(base.join(positions))?;
                Ok(Generator::Copula(StudentCopulaModel::new(
                    matrix(correlation, "correlation")?,
                    *copula_dof,
                    marginal_dof.clone(),
                    fudge.clone(),
                    spot.clone(),
                    positions,
                )?))
            }
            ModelConfig::SyntheticBook { members, underlyings, copula_dof, book_seed } => {
                Ok(Generator::Copula(synthetic_book(*members, *underlyings, *copula_dof, *book_seed)?))
            }
        }
    }
}

/// `"off"` or a node count per axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Surrogate {
    #[default]
    Off,
    Nodes(usize),
}

impl Serialize for Surrogate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Surrogate::Off => s.serialize_str("off"),
            Surrogate::Nodes(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Surrogate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Count(usize),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) if t == "off" => Ok(Surrogate::Off),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("surrogate must be \"off\" or a node count, got {t:?}"))),
            Raw::Count(n) if n >= 2 => Ok(Surrogate::Nodes(n)),
            Raw::Count(n) => Err(serde::de::Error::custom(format!("surrogate needs at least 2 nodes, got {n}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    MonteCarlo,
    /// Deterministic quadrature; Gaussian models with `d <= 3` only.
    Quadrature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_n")]
    pub n_scenarios: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub surrogate: Surrogate,
    #[serde(default)]
    pub estimator: EstimatorKind,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub accept_nonunique: bool,
}

fn default_n() -> usize {
    100_000
}
fn default_seed() -> u64 {
    42
}
fn default_max_iter() -> usize {
    200
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_scenarios: default_n(),
            seed: default_seed(),
            tol: None,
            method: Method::Kkt,
            surrogate: Surrogate::Off,
            estimator: EstimatorKind::MonteCarlo,
            max_iter: default_max_iter(),
            accept_nonunique: false,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            method: self.method,
            tol: self.tol,
            max_iter: self.max_iter,
            accept_nonunique: self.accept_nonunique,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: Format,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir(), format: Format::Json }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShockSpec {
    /// `Y = X`.
    Same,
    /// `Y` independent of `X`: normal entries with the given means and
    /// standard deviations, drawn with `seed`.
    IndependentNormal {
        mean: Vec<f64>,
        std: Vec<f64>,
        #[serde(default = "shock_seed")]
        seed: u64,
    },
    /// Binary scenario file aligned row by row with `X`.
    File { path: PathBuf },
}

fn shock_seed() -> u64 {
    7
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityKind {
    #[default]
    LinearSystem,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shock: Option<ShockSpec>,
    /// Also report derivatives in the systemic weight.
    #[serde(default)]
    pub alpha: bool,
    #[serde(default)]
    pub method: SensitivityKind,
    #[serde(default = "fd_step")]
    pub fd_step: f64,
}

fn fd_step() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_grid: Option<SrcGridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_profile: Option<AlphaProfileConfig>,
}

/// Closed-form systemic contribution over `σ₁` in `[sigma1_min,
/// sigma1_max]` for each correlation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrcGridConfig {
    #[serde(default)]
    pub sigma1_min: f64,
    #[serde(default = "three")]
    pub sigma1_max: f64,
    #[serde(default = "steps")]
    pub steps: usize,
    #[serde(default = "rho_grid")]
    pub rhos: Vec<f64>,
    #[serde(default = "unit")]
    pub sigma2: f64,
    #[serde(default = "unit")]
    pub alpha: f64,
}

/// `α`-derivatives at `α = 0` for the trivariate model with `(X₁, X₂)`
/// correlated and `X₃` independent, all unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaProfileConfig {
    #[serde(default = "rho_grid")]
    pub rhos: Vec<f64>,
    #[serde(default = "profile_n")]
    pub n_scenarios: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn three() -> f64 {
    3.0
}
fn steps() -> usize {
    61
}
fn unit() -> f64 {
    1.0
}
fn profile_n() -> usize {
    200_000
}
fn rho_grid() -> Vec<f64> {
    vec![-0.9, -0.5, -0.2, 0.0, 0.2, 0.5, 0.9]
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        if self.solver.n_scenarios == 0 {
            return Err(MsraError::invalid("solver.n_scenarios must be positive"));
        }
        if let Some(tol) = self.solver.tol {
            if !(tol > 0.0) {
                return Err(MsraError::invalid(format!("solver.tol must be positive, got {tol}")));
            }
        }
        if self.threads == Some(0) {
            return Err(MsraError::invalid("threads must be positive"));
        }
        if let Some(s) = &self.sensitivity {
            if !(s.fd_step > 0.0) {
                return Err(MsraError::invalid("sensitivity.fd_step must be positive"));
            }
        }
        Ok(())
    }

    pub fn require_loss(&self) -> Result<&LossSpec> {
        self.loss.as_ref().ok_or_else(|| MsraError::invalid("config has no loss section"))
    }
}
