//! Parameter checkpoints: a TOML manifest next to a flat little-endian `f64` file.
//!
//! `save(path, ..)` writes the manifest to `path` and the values to
//! `path` with its extension replaced by `bin`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coordinators::{NeuralCoordinator, NeuralCoordinatorConfig};
use crate::error::{Error, Result};
use crate::policies::{BaseStockConfig, NeuralPolicy, NeuralPolicyConfig};
use crate::tape::{ParamVector, Segment};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Model {
    NeuralPolicy { config: NeuralPolicyConfig },
    BaseStock { config: BaseStockConfig },
    NeuralCoordinator { config: NeuralCoordinatorConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub values_file: String,
    pub parameter_count: usize,
    /// Layer widths for network models, empty otherwise.
    pub widths: Vec<usize>,
    pub model: Model,
    pub segments: Vec<Segment>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub params: ParamVector,
}

impl Checkpoint {
    fn widths(&self) -> Result<Vec<usize>> {
        Ok(match &self.model {
            Model::NeuralPolicy { config } => NeuralPolicy::new(config.clone())?.mlp.widths,
            Model::NeuralCoordinator { config } => NeuralCoordinator::new(config.clone())?.mlp.widths,
            Model::BaseStock { .. } => Vec::new(),
        })
    }

    /// Checks the parameters against the layout implied by the model config.
    pub fn validate(&self) -> Result<()> {
        let expected = match &self.model {
            Model::NeuralPolicy { config } => NeuralPolicy::new(config.clone())?.mlp.zero_params(),
            Model::NeuralCoordinator { config } => {
                NeuralCoordinator::new(config.clone())?.mlp.zero_params()
            }
            Model::BaseStock { config } => {
                config.validate()?;
                ParamVector::zeros(&[])
            }
        };
        if expected.segments() != self.params.segments() {
            return Err(Error::Data(
                "checkpoint segments do not match the model configuration".into(),
            ));
        }
        Ok(())
    }
}

pub fn values_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.validate()?;
    let bin = values_path(path);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        values_file: bin
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        parameter_count: ckpt.params.len(),
        widths: ckpt.widths()?,
        model: ckpt.model.clone(),
        segments: ckpt.params.segments().to_vec(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    let bytes: Vec<u8> = ckpt
        .params
        .values()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    fs::write(&bin, bytes)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "checkpoint format {} is not supported",
            manifest.format_version
        )));
    }
    let bin = path.with_file_name(&manifest.values_file);
    if !bin.exists() {
        return Err(Error::MissingFile(bin));
    }
    let bytes = fs::read(&bin)?;
    if bytes.len() != 8 * manifest.parameter_count {
        return Err(Error::LengthMismatch {
            what: "checkpoint bytes",
            expected: 8 * manifest.parameter_count,
            found: bytes.len(),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let ckpt = Checkpoint {
        model: manifest.model,
        params: ParamVector::from_parts(values, manifest.segments)?,
    };
    ckpt.validate()?;
    if ckpt.widths()? != manifest.widths {
        return Err(Error::Data("checkpoint widths disagree with its model".into()));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NeuralPolicyConfig {
            hidden: vec![5],
            ..NeuralPolicyConfig::default()
        };
        let net = NeuralPolicy::new(cfg.clone()).unwrap();
        let params = net.mlp.init_params(&mut seed::rng(3), 1.0);
        let ckpt = Checkpoint {
            model: Model::NeuralPolicy { config: cfg },
            params,
        };
        let p = dir.path().join("policy.toml");
        save(&p, &ckpt).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(fs::metadata(values_path(&p)).unwrap().len() as usize, 8 * ckpt.params.len());
    }

    #[test]
    fn truncated_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NeuralCoordinatorConfig {
            hidden: vec![3],
            forecast_len: 1,
            ..NeuralCoordinatorConfig::default()
        };
        let net = NeuralCoordinator::new(cfg.clone()).unwrap();
        let ckpt = Checkpoint {
            model: Model::NeuralCoordinator { config: cfg },
            params: net.zero_params(),
        };
        let p = dir.path().join("coord.toml");
        save(&p, &ckpt).unwrap();
        let bin = values_path(&p);
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load(&p), Err(Error::LengthMismatch { .. })));
        assert!(matches!(
            load(&dir.path().join("absent.toml")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn base_stock_has_no_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint {
            model: Model::BaseStock {
                config: BaseStockConfig::default(),
            },
            params: ParamVector::zeros(&[]),
        };
        let p = dir.path().join("bs.toml");
        save(&p, &ckpt).unwrap();
        assert_eq!(load(&p).unwrap(), ckpt);
    }
}
