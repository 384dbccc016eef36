use std::path::{Path, PathBuf};

use graspforge_core::dataset::AugmentParams;
use graspforge_core::eval::ExtractOptions;
use graspforge_core::network::{AuxTask, ModelConfig, Variant};
use graspforge_core::{Error, LossKind, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Train,
    Eval,
    Infer,
    Synth,
}

/// Everything that determines a run. It is embedded in every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub data: PathBuf,
    pub out: PathBuf,
    pub variant: Variant,
    pub aux: AuxTask,
    pub loss: LossKind,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub fold: usize,
    pub folds: usize,
    /// Seed of the object-wise fold shuffle, kept apart from `seed` so that
    /// runs with different seeds share splits.
    pub split_seed: u64,
    pub input_size: usize,
    /// `None` trains on centred crops only.
    pub augment: Option<AugmentParams>,
    pub extract: ExtractOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_input_size(300)
    }
}

impl RunConfig {
    pub fn for_input_size(input_size: usize) -> Self {
        Self {
            command: Command::Train,
            data: PathBuf::from("data"),
            out: PathBuf::from("runs"),
            variant: Variant::Ggcnn,
            aux: AuxTask::None,
            loss: LossKind::Standard,
            epochs: 40,
            batch: 8,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 0,
            fold: 0,
            folds: 5,
            split_seed: 0,
            input_size,
            augment: Some(AugmentParams {
                output_size: input_size,
                ..AugmentParams::default()
            }),
            extract: ExtractOptions::for_input_size(input_size),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let config = match self.variant {
            Variant::Ggcnn => {
                if self.aux != AuxTask::None {
                    return Err(Error::Config(format!(
                        "ggcnn has no auxiliary head, got --aux {}",
                        self.aux
                    )));
                }
                ModelConfig::ggcnn(self.input_size)
            }
            Variant::Mtgcnn => ModelConfig::mtgcnn(self.input_size, self.aux),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !self.lr.is_finite()
            || self.lr <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(Error::Config(format!(
                "invalid optimizer settings lr={} weight_decay={}",
                self.lr, self.weight_decay
            )));
        }
        if self.folds < 2 || self.fold >= self.folds {
            return Err(Error::Config(format!(
                "fold {} is not one of {} folds",
                self.fold, self.folds
            )));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
            if a.output_size != self.input_size {
                return Err(Error::Config(format!(
                    "augmentation output {} differs from input size {}",
                    a.output_size, self.input_size
                )));
            }
        }
        Ok(())
    }

    /// Makes `data` and `out` absolute against the current directory.
    pub fn resolve_paths(mut self) -> Result<Self> {
        let abs = |p: &Path| {
            std::path::absolute(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })
        };
        self.data = abs(&self.data)?;
        self.out = abs(&self.out)?;
        Ok(self)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}
