//! JSON experiment configuration.

use std::path::Path;

use genbound_core::infotheory::{BinningSpec, Pairing};
use genbound_core::training::SgdConfig;
use genbound_core::{Aggregation, NodeAlgorithm, ProblemKind, ProblemSpec, RiskMethod, Scenario};
use serde::{Deserialize, Serialize};

use crate::{CliError, Command};

pub const DEFAULT_K_GRID: [usize; 8] = [2, 3, 5, 8, 12, 18, 27, 40];

/// How `R²` is obtained for the sub-Gaussian bounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailConfig {
    /// Variance of product-marginal losses, measured alongside the MI pairs.
    #[default]
    Estimate,
    SubGaussian { r2: f64 },
}

fn default_n() -> usize {
    10
}
fn default_m_outer() -> usize {
    100_000
}
fn default_mi_samples() -> usize {
    1_000_000
}
fn default_one() -> usize {
    1
}
fn default_sweep() -> Vec<usize> {
    vec![16, 32, 64]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand when present.
    #[serde(default)]
    pub experiment: Option<Command>,
    pub problem: ProblemSpec,
    /// Defaults to the exact ERM for the problem's data.
    #[serde(default)]
    pub algorithm: Option<NodeAlgorithm>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(rename = "K", default)]
    pub k: Option<usize>,
    #[serde(rename = "K_grid", default)]
    pub k_grid: Option<Vec<usize>>,
    #[serde(rename = "M_outer", default = "default_m_outer")]
    pub m_outer: usize,
    /// Monte Carlo draws per population-risk evaluation; closed form when absent.
    #[serde(rename = "M_population", default)]
    pub m_population: Option<usize>,
    #[serde(default = "default_mi_samples")]
    pub mi_samples: usize,
    /// Number of sample indices `i` whose MI estimates are averaged.
    #[serde(default = "default_one")]
    pub mi_indices: usize,
    #[serde(default)]
    pub binning: BinningSpec,
    #[serde(default)]
    pub pairing: Pairing,
    #[serde(default = "default_sweep")]
    pub sweep_bins: Vec<usize>,
    #[serde(default)]
    pub sgd: Option<SgdConfig>,
    #[serde(default)]
    pub tail: TailConfig,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub bits: Vec<u64>,
    #[serde(default)]
    pub clip_radius: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Minimal configuration for a problem, every other field at its default.
    pub fn for_problem(problem: ProblemSpec) -> Self {
        ExperimentConfig {
            experiment: None,
            problem,
            algorithm: None,
            n: default_n(),
            k: None,
            k_grid: None,
            m_outer: default_m_outer(),
            m_population: None,
            mi_samples: default_mi_samples(),
            mi_indices: 1,
            binning: BinningSpec::default(),
            pairing: Pairing::default(),
            sweep_bins: default_sweep(),
            sgd: None,
            tail: TailConfig::Estimate,
            aggregation: Aggregation::Average,
            epsilons: Vec::new(),
            bits: Vec::new(),
            clip_radius: None,
            seed: 0,
            workers: None,
        }
    }

    pub fn k_values(&self) -> Vec<usize> {
        match (&self.k_grid, self.k) {
            (Some(grid), _) => grid.clone(),
            (None, Some(k)) => vec![k],
            (None, None) => DEFAULT_K_GRID.to_vec(),
        }
    }

    pub fn algorithm(&self) -> NodeAlgorithm {
        self.algorithm.clone().unwrap_or(match self.problem.kind {
            ProblemKind::GaussianLocation => NodeAlgorithm::SampleMean,
            ProblemKind::LinearRegression => NodeAlgorithm::NormalEquations,
        })
    }

    pub fn scenario(&self, k: usize) -> Scenario {
        let mut sc = Scenario::new(self.problem.clone(), self.algorithm(), self.n, k);
        sc.aggregation = self.aggregation;
        if let Some(m) = self.m_population {
            sc.risk = RiskMethod::MonteCarlo { samples: m };
        }
        sc
    }

    /// Rejects every precondition violation before any work starts.
    pub fn validate(&self, command: Command) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if let Some(e) = self.experiment {
            if e != command {
                return bad(format!("config is for `{}` but `{}` was requested", e.name(), command.name()));
            }
        }
        if self.k.is_some() && self.k_grid.is_some() {
            return bad("set either K or K_grid, not both".into());
        }
        let grid = self.k_values();
        if grid.is_empty() || grid.contains(&0) {
            return bad("K values must be >= 1 and the grid nonempty".into());
        }
        if self.m_outer < 2 || self.mi_samples < 2 {
            return bad("M_outer and mi_samples must be >= 2".into());
        }
        if self.m_population == Some(0) {
            return bad("M_population must be >= 1".into());
        }
        if self.mi_indices == 0 || self.mi_indices > self.n {
            return bad(format!("mi_indices must lie in 1..={}", self.n));
        }
        self.binning.validate()?;
        if self.sweep_bins.len() < 2 || self.sweep_bins.iter().any(|&b| b < 2) {
            return bad("sweep_bins needs at least two counts, each >= 2".into());
        }
        if let TailConfig::SubGaussian { r2 } = self.tail {
            if !(r2 > 0.0 && r2.is_finite()) {
                return bad(format!("tail R² must be positive, got {r2}"));
            }
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("every epsilon must be positive".into());
        }
        if self.bits.contains(&0) {
            return bad("bit budgets must be >= 1".into());
        }
        if let Some(r) = self.clip_radius {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("clip_radius must be >= 0, got {r}"));
            }
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        for &k in &grid {
            self.scenario(k).validate()?;
        }
        let needs = |kind: ProblemKind| {
            if self.problem.kind == kind {
                Ok(())
            } else {
                Err(CliError::Config(format!("`{}` needs a {kind:?} problem", command.name())))
            }
        };
        match command {
            Command::GaussianMean => needs(ProblemKind::GaussianLocation)?,
            Command::LinregFig2 => needs(ProblemKind::LinearRegression)?,
            Command::Sgd => match &self.sgd {
                Some(cfg) => cfg.validate(self.n, self.problem.d)?,
                None => return bad("`sgd` needs an sgd section".into()),
            },
            Command::BoundsTable | Command::MiSweep | Command::Check => {}
        }
        let mi_needed = matches!(
            command,
            Command::GaussianMean | Command::LinregFig2 | Command::Sgd | Command::MiSweep
        );
        if mi_needed
            && self.problem.d > 1
            && self.pairing.projection == genbound_core::infotheory::Projection::Scalar
        {
            return bad("d > 1 needs pairing.projection = \"per-coordinate-proxy\"".into());
        }
        Ok(())
    }
}
