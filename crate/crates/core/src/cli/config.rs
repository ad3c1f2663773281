//! TOML experiment configuration. Unknown keys are rejected everywhere.

use super::CliError;
use crate::dynamics::Model;
use crate::hierarchy::{ClosureRule, DEFAULT_KIRKWOOD_FLOOR};
use crate::kernels::{KernelFamily, KernelPair, KernelSpec, DEFAULT_TAIL_TOL};
use crate::pointset::Torus;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub run: Option<RunConfig>,
    pub analysis: Option<AnalysisConfig>,
    pub hierarchy: Option<HierarchyConfig>,
    pub certify: Option<CertifyConfig>,
    pub bound: Option<BoundConfig>,
    #[serde(default)]
    pub outputs: OutputConfig,
}

/// A kernel family, or the competition kernel given as a multiple of the
/// dispersal kernel.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Gaussian { amplitude: f64, width: f64 },
    TopHat { height: f64, range: f64 },
    Exponential { amplitude: f64, scale: f64 },
    Zero,
    ScaledDispersal { factor: f64 },
}

impl KernelConfig {
    fn family(self) -> Option<KernelFamily> {
        Some(match self {
            KernelConfig::Gaussian { amplitude, width } => KernelFamily::Gaussian { amplitude, width },
            KernelConfig::TopHat { height, range } => KernelFamily::TopHat { height, range },
            KernelConfig::Exponential { amplitude, scale } => KernelFamily::Exponential { amplitude, scale },
            KernelConfig::Zero => KernelFamily::Zero,
            KernelConfig::ScaledDispersal { .. } => return None,
        })
    }
}

fn default_dim() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Torus side length L.
    pub side: f64,
    pub mortality: f64,
    pub tail_tol: Option<f64>,
    pub dispersal: KernelConfig,
    pub competition: KernelConfig,
}

impl ModelConfig {
    pub fn pair(&self) -> Result<KernelPair, CliError> {
        let tol = self.tail_tol.unwrap_or(DEFAULT_TAIL_TOL);
        let plus_family = self
            .dispersal
            .family()
            .ok_or_else(|| CliError::Config("model.dispersal cannot be scaled_dispersal".into()))?;
        let plus = KernelSpec::with_tail_tol(plus_family, self.dim, tol)?;
        let minus = match self.competition {
            KernelConfig::ScaledDispersal { factor } => plus.scaled(factor)?,
            other => KernelSpec::with_tail_tol(other.family().expect("scaled case handled"), self.dim, tol)?,
        };
        Ok(KernelPair::new(plus, minus)?)
    }

    pub fn model(&self) -> Result<Model, CliError> {
        Ok(Model::new(self.pair()?, self.mortality)?)
    }

    pub fn torus(&self) -> Result<Torus, CliError> {
        Ok(Torus::new(self.dim, self.side)?)
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Poisson intensity of the initial configuration.
    pub initial_density: Option<f64>,
    /// Snapshot file to start every replica from.
    pub snapshot: Option<PathBuf>,
    pub t_end: f64,
    /// Spacing of the observation grid on `[0, t_end]`.
    pub observe_every: f64,
    #[serde(default = "one")]
    pub replicas: usize,
    pub population_cap: Option<usize>,
    pub recompute_period: Option<u64>,
}

impl RunConfig {
    pub fn observation_times(&self) -> Result<Vec<f64>, CliError> {
        if !(self.t_end > 0.0 && self.observe_every > 0.0 && self.observe_every <= self.t_end) {
            return Err(CliError::Config(format!(
                "run.t_end = {} and run.observe_every = {} must satisfy 0 < observe_every ≤ t_end",
                self.t_end, self.observe_every
            )));
        }
        let n = (self.t_end / self.observe_every).round() as usize;
        Ok((0..=n).map(|i| (i as f64 * self.observe_every).min(self.t_end)).collect())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (self.initial_density, &self.snapshot) {
            (Some(k), None) if k >= 0.0 && k.is_finite() => {}
            (Some(k), None) => return Err(CliError::Config(format!("run.initial_density = {k}"))),
            (None, Some(_)) => {}
            _ => return Err(CliError::Config("exactly one of run.initial_density and run.snapshot is required".into())),
        }
        if self.replicas == 0 {
            return Err(CliError::Config("run.replicas must be positive".into()));
        }
        self.observation_times().map(|_| ())
    }
}

fn default_bin_width() -> f64 {
    0.25
}
fn default_r_max() -> f64 {
    10.0
}
fn default_window() -> f64 {
    1.0
}
fn default_n_max() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    /// Side of the cubic counting windows.
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Time range over which each replica's snapshots are pooled into one
    /// pair-correlation sample.
    pub pool_window: Option<[f64; 2]>,
    /// Time range of the exponential decay fit.
    pub fit_window: Option<[f64; 2]>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bin_width: default_bin_width(),
            r_max: default_r_max(),
            window: default_window(),
            n_max: default_n_max(),
            pool_window: None,
            fit_window: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureName {
    Poisson,
    Kirkwood,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    /// Number of grid points N.
    pub grid: usize,
    /// Step size; defaults to the stability bound.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub closure: ClosureName,
    pub kirkwood_floor: Option<f64>,
    #[serde(default = "one")]
    pub stride: usize,
    /// Initial Poisson density; defaults to `run.initial_density`.
    pub initial_density: Option<f64>,
    pub k1_bound: Option<f64>,
}

impl HierarchyConfig {
    pub fn closure(&self) -> ClosureRule {
        match self.closure {
            ClosureName::Poisson => ClosureRule::Poisson,
            ClosureName::Kirkwood => ClosureRule::Kirkwood { floor: self.kirkwood_floor.unwrap_or(DEFAULT_KIRKWOOD_FLOOR) },
        }
    }
}

fn default_budget() -> usize {
    100_000
}
fn default_min_size() -> usize {
    2
}
fn default_max_size() -> usize {
    6
}
fn default_refine_seeds() -> usize {
    100
}
fn default_refine_iterations() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_min_size")]
    pub min_size: usize,
    #[serde(default = "default_max_size")]
    pub max_size: usize,
    pub b_max: Option<f64>,
    /// Number of worst samples handed to the local search.
    #[serde(default = "default_refine_seeds")]
    pub refine_seeds: usize,
    #[serde(default = "default_refine_iterations")]
    pub refine_iterations: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            budget: default_budget(),
            min_size: default_min_size(),
            max_size: default_max_size(),
            b_max: None,
            refine_seeds: default_refine_seeds(),
            refine_iterations: default_refine_iterations(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub theta: f64,
    pub theta_prime: f64,
    pub envelope: Option<EnvelopeConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    Growth,
    Extinction,
    NoDispersal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvelopeConstants {
    Growth { c_delta: f64, delta: f64 },
    Extinction { c_eps: f64, eps: f64 },
    NoDispersal { k0: f64 },
}

// serde cannot combine `flatten` with `deny_unknown_fields`, so the
// case-specific constants are optional fields checked by `constants()`.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub case: EnvelopeKind,
    pub c_delta: Option<f64>,
    pub delta: Option<f64>,
    pub c_eps: Option<f64>,
    pub eps: Option<f64>,
    pub k0: Option<f64>,
    /// Order n of the correlation function.
    pub order: usize,
    pub t_end: f64,
    pub points: usize,
    /// Positions of η (flat, `dim` per point) for the no-dispersal case;
    /// without them the points are taken to be non-interacting.
    pub positions: Option<Vec<f64>>,
}

impl EnvelopeConfig {
    pub fn constants(&self) -> Result<EnvelopeConstants, CliError> {
        let given = [
            ("c_delta", self.c_delta),
            ("delta", self.delta),
            ("c_eps", self.c_eps),
            ("eps", self.eps),
            ("k0", self.k0),
        ];
        let wanted: &[&str] = match self.case {
            EnvelopeKind::Growth => &["c_delta", "delta"],
            EnvelopeKind::Extinction => &["c_eps", "eps"],
            EnvelopeKind::NoDispersal => &["k0"],
        };
        for (name, value) in given {
            match (wanted.contains(&name), value) {
                (true, None) => return Err(CliError::Config(format!("bound.envelope: missing `{name}`"))),
                (false, Some(_)) => {
                    return Err(CliError::Config(format!("bound.envelope: `{name}` does not apply to this case")))
                }
                _ => {}
            }
        }
        let get = |v: Option<f64>| v.unwrap_or_default();
        Ok(match self.case {
            EnvelopeKind::Growth => EnvelopeConstants::Growth { c_delta: get(self.c_delta), delta: get(self.delta) },
            EnvelopeKind::Extinction => EnvelopeConstants::Extinction { c_eps: get(self.c_eps), eps: get(self.eps) },
            EnvelopeKind::NoDispersal => EnvelopeConstants::NoDispersal { k0: get(self.k0) },
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Write per-replica snapshot files at every observation time.
    #[serde(default)]
    pub snapshots: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn run(&self) -> Result<&RunConfig, CliError> {
        let run = self.run.as_ref().ok_or_else(|| CliError::Config("missing [run] section".into()))?;
        run.validate()?;
        Ok(run)
    }
}
