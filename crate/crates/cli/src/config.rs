//! Experiment configuration files.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use popgames::edm::Protocol;
use popgames::games::{congestion_example, demand_response_example, task_allocation_example, PopulationGame};
use popgames::pdm::{PdmModel, PdmState};
use popgames::simplex::{lattice_counts, SimplexState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub game: GameConfig,
    pub protocol: ProtocolConfig,
    pub pdm: PdmConfig,
    pub integrator: IntegratorConfig,
    pub initial: InitialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibrium: Option<EquilibriumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic: Option<StochasticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<ChecksConfig>,
    /// Relative paths resolve against the working directory; `--out` overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameConfig {
    Congestion,
    DemandResponse,
    TaskAllocation,
    Affine {
        /// Row-major.
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
        #[serde(default = "unit_mass")]
        mass: f64,
    },
}

fn unit_mass() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolConfig {
    Bnn,
    Smith,
    Logit { eta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PdmConfig {
    Memoryless,
    Anticipatory { alpha: f64, mu2: f64 },
    Smoothing { alpha: f64 },
    General { alpha: f64, mu0: f64, mu1: f64, mu2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub horizon: f64,
    pub step: f64,
    /// Keep every `stride`-th sample in trajectory CSVs.
    #[serde(default = "unit_stride")]
    pub stride: usize,
}

fn unit_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    List {
        points: Vec<Vec<f64>>,
    },
    /// Barycentric lattice `{k/resolution}`; `boundary_only` drops interior points.
    Grid {
        resolution: usize,
        #[serde(default)]
        boundary_only: bool,
    },
    Random {
        count: usize,
        seed: u64,
    },
}

/// Initial PDM state. Defaults to `F(x0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdmStart {
    #[default]
    Payoff,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumConfig {
    #[serde(default = "default_grid")]
    pub grid_resolution: usize,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    #[serde(default)]
    pub pdm_start: PdmStart,
    /// Threshold for `time_to_tolerance` in run summaries.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_grid() -> usize {
    200
}

fn default_tol() -> f64 {
    1e-9
}

fn default_threshold() -> f64 {
    1e-2
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        EquilibriumConfig {
            grid_resolution: default_grid(),
            tolerance: default_tol(),
            pdm_start: PdmStart::default(),
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticConfig {
    pub populations: Vec<usize>,
    pub seeds: u64,
    #[serde(default)]
    pub base_seed: u64,
    /// Defaults to the integrator horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    #[serde(default)]
    pub passivity: bool,
    #[serde(default)]
    pub antipassivity: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every block before any run starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let pdm = self.pdm_model()?;
        self.protocol()?;
        let h = &self.integrator;
        if !(h.horizon.is_finite() && h.horizon > 0.0 && h.step > 0.0 && h.step <= h.horizon) {
            return Err(CliError::Validation("integrator: need 0 < step <= horizon".into()));
        }
        if h.stride == 0 {
            return Err(CliError::Validation("integrator: stride must be positive".into()));
        }
        if self.initial_states(pdm.game())?.is_empty() {
            return Err(CliError::Validation("initial: no initial conditions".into()));
        }
        if let Some(eq) = &self.equilibrium {
            if !(eq.tolerance > 0.0 && eq.threshold > 0.0) {
                return Err(CliError::Validation("equilibrium: tolerance and threshold must be positive".into()));
            }
        }
        if let Some(st) = &self.stochastic {
            if st.populations.is_empty() || st.populations.contains(&0) || st.seeds == 0 {
                return Err(CliError::Validation("stochastic: need nonempty positive populations and seeds".into()));
            }
            if st.horizon.is_some_and(|t| !(t.is_finite() && t > 0.0)) {
                return Err(CliError::Validation("stochastic: horizon must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match &self.game {
            GameConfig::Affine { offset, .. } => offset.len(),
            _ => 3,
        }
    }

    pub fn game(&self) -> Result<PopulationGame, CliError> {
        Ok(match &self.game {
            GameConfig::Congestion => congestion_example(),
            GameConfig::DemandResponse => demand_response_example(),
            GameConfig::TaskAllocation => task_allocation_example(),
            GameConfig::Affine { matrix, offset, mass } => {
                let n = offset.len();
                if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
                    return Err(CliError::Validation(format!("game: matrix must be {n} x {n}")));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                PopulationGame::affine(DMatrix::from_row_slice(n, n, &flat), DVector::from_column_slice(offset), *mass)?
            }
        })
    }

    pub fn protocol(&self) -> Result<Protocol, CliError> {
        let n = self.dim();
        Ok(match self.protocol {
            ProtocolConfig::Bnn => Protocol::bnn(n)?,
            ProtocolConfig::Smith => Protocol::smith(n)?,
            ProtocolConfig::Logit { eta } => Protocol::logit(n, eta)?,
        })
    }

    pub fn pdm_model(&self) -> Result<PdmModel, CliError> {
        let game = self.game()?;
        Ok(match self.pdm {
            PdmConfig::Memoryless => PdmModel::memoryless(game),
            PdmConfig::Anticipatory { alpha, mu2 } => PdmModel::anticipatory(game, alpha, mu2)?,
            PdmConfig::Smoothing { alpha } => PdmModel::smoothing(game, alpha)?,
            PdmConfig::General { alpha, mu0, mu1, mu2 } => PdmModel::general(game, alpha, mu0, mu1, mu2)?,
        })
    }

    pub fn equilibrium_settings(&self) -> EquilibriumConfig {
        self.equilibrium.clone().unwrap_or_default()
    }

    pub fn initial_pdm_state(&self, pdm: &PdmModel, x0: &SimplexState) -> Result<PdmState, CliError> {
        Ok(match self.equilibrium_settings().pdm_start {
            PdmStart::Payoff => pdm.default_state(x0)?,
            PdmStart::Zero => PdmState::zeros(pdm.dim()),
        })
    }

    pub fn initial_states(&self, game: &PopulationGame) -> Result<Vec<SimplexState>, CliError> {
        let n = game.dim();
        let m = game.mass();
        match &self.initial {
            InitialConfig::List { points } => points
                .iter()
                .map(|p| {
                    if p.len() != n {
                        return Err(CliError::Validation(format!("initial: point {p:?} must have {n} entries")));
                    }
                    Ok(SimplexState::new(p.clone(), m)?)
                })
                .collect(),
            InitialConfig::Grid { resolution, boundary_only } => {
                if *resolution == 0 {
                    return Err(CliError::Validation("initial: grid resolution must be positive".into()));
                }
                Ok(lattice_counts(n, *resolution)
                    .into_iter()
                    .filter(|c| !boundary_only || c.contains(&0))
                    .map(|c| {
                        let z = c.iter().map(|&k| k as f64 * m / *resolution as f64).collect();
                        SimplexState::new(z, m).expect("lattice point lies on the simplex")
                    })
                    .collect())
            }
            InitialConfig::Random { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..*count).map(|_| SimplexState::random(n, m, &mut rng)).collect())
            }
        }
    }
}
