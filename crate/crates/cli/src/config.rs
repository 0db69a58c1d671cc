//! Run configuration: one TOML file with a table per pipeline stage.
//!
//! `seed` fields inside the stage tables are replaced by seeds split from the
//! top-level `seed` (see [`capcoord::seed`]), so a run is reproduced by the
//! file alone.

use std::path::{Path, PathBuf};

use capcoord::coordinators::{DemandForecaster, DualSearchConfig, NeuralCoordinatorConfig};
use capcoord::idp::InitMode;
use capcoord::policies::{BaseStockConfig, NeuralPolicyConfig};
use capcoord::synth::PopulationConfig;
use capcoord::training::TrainConfig;
use serde::Deserialize;

use crate::CliError;

pub const OUT_DIR_ENV: &str = "CAPCOORD_OUT_DIR";

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub data: PopulationConfig,
    pub paths: PathsConfig,
    pub policy: PolicySection,
    pub train: TrainConfig,
    pub coordinator: CoordinatorSection,
    pub mpc: MpcSection,
    pub backtest: BacktestSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub order: u32,
    pub scale: f64,
    pub base_level: f64,
    pub count: usize,
    /// Multiply sampled paths by the mean weekly demand volume of the data.
    pub anchor_to_demand: bool,
    /// Sample an inbound curve too; inbound is unlimited otherwise.
    pub inbound: Option<InboundPaths>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            order: 3,
            scale: 0.05,
            base_level: 0.55,
            count: 20,
            anchor_to_demand: true,
            inbound: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InboundPaths {
    pub order: u32,
    pub scale: f64,
    pub base_level: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Neural,
    BaseStock,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub kind: PolicyKind,
    pub neural: NeuralPolicyConfig,
    pub base_stock: BaseStockConfig,
    /// Scale of the random initial weights.
    pub init_gain: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            kind: PolicyKind::Neural,
            neural: NeuralPolicyConfig::default(),
            base_stock: BaseStockConfig::default(),
            init_gain: 0.1,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoordinatorSection {
    pub network: NeuralCoordinatorConfig,
    pub init_gain: f64,
    pub train: TrainConfig,
}

impl Default for CoordinatorSection {
    fn default() -> Self {
        CoordinatorSection {
            network: NeuralCoordinatorConfig::default(),
            init_gain: 0.1,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSection {
    pub search: DualSearchConfig,
    pub forecaster: DemandForecaster,
    pub planner: BaseStockConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSection {
    pub init_modes: Vec<InitMode>,
    pub gamma: f64,
}

impl Default for BacktestSection {
    fn default() -> Self {
        BacktestSection {
            init_modes: vec![InitMode::OnhandWithInflight, InitMode::Zero],
            gamma: 1.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(capcoord::Error::MissingFile(path.to_path_buf()).into());
        }
        let text = std::fs::read_to_string(path).map_err(capcoord::Error::from)?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    /// Output directory: the environment override, then `out_dir`, then the
    /// working directory.
    pub fn out_dir(&self) -> PathBuf {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."))
    }

    /// Resolves an output file against [`RunConfig::out_dir`] unless absolute.
    pub fn output(&self, file: &Path) -> Result<PathBuf, CliError> {
        let path = if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.out_dir().join(file)
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(capcoord::Error::from)?;
        }
        Ok(path)
    }
}
