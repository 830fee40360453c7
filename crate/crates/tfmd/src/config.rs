use std::path::Path;

use serde::{Deserialize, Serialize};
use tfmd_core::cnn::TrainConfig;
use tfmd_core::imaging::ImageConfig;
use tfmd_core::motorsim::MotorSpec;
use tfmd_core::tfr::{Method, TfrConfig};

use crate::{Error, Result};

/// Everything `run-all` needs. Every field has a default, so an empty file
/// is a valid desk-scale configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for generation, fold assignment and training.
    pub seed: u64,
    /// Segments per (class, load) cell.
    pub per_cell: usize,
    /// Cross-validation folds.
    pub k: usize,
    pub methods: Vec<Method>,
    pub motor: MotorSpec,
    pub tfr: TfrConfig,
    pub image: ImageConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 2024,
            per_cell: 20,
            k: 10,
            methods: Method::ALL.to_vec(),
            motor: MotorSpec::default(),
            tfr: TfrConfig::default(),
            image: ImageConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.motor.validate()?;
        self.train.validate()?;
        if self.per_cell == 0 {
            return Err(Error::Config("per_cell must be at least 1".into()));
        }
        if self.k < 2 {
            return Err(Error::Config("k must be at least 2".into()));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        Ok(())
    }
}

fn parse<T: for<'de> Deserialize<'de>>(
    text: &str,
    toml_syntax: bool,
) -> std::result::Result<T, String> {
    if toml_syntax {
        toml::from_str(text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

fn read(path: &Path) -> Result<(String, bool)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let toml_syntax = path.extension().is_some_and(|e| e == "toml");
    Ok((text, toml_syntax))
}

/// Load a run configuration from JSON, or TOML when the extension is
/// `.toml`.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let (text, toml_syntax) = read(path)?;
    let cfg: RunConfig =
        parse(&text, toml_syntax).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Generator parameters from either a full run configuration (its `motor`
/// table) or a bare motor specification.
pub fn load_motor_spec(path: &Path) -> Result<MotorSpec> {
    let (text, toml_syntax) = read(path)?;
    let spec = match parse::<RunConfig>(&text, toml_syntax) {
        Ok(run) => run.motor,
        Err(run_err) => parse::<MotorSpec>(&text, toml_syntax).map_err(|e| {
            Error::Config(format!(
                "{}: not a run config ({run_err}) nor a motor spec ({e})",
                path.display()
            ))
        })?,
    };
    spec.validate()?;
    Ok(spec)
}
