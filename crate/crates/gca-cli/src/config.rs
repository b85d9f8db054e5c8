//! Run configuration: defaults, presets, config file, and flag overrides.
//!
//! Precedence, lowest to highest: built-in defaults → `--preset` → `--config`
//! file → explicit CLI flags. The fully resolved configuration is written
//! into every run directory as `config.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use gca_core::grid::Metric;
use gca_core::kernel::{AdamConfig, ArchDescriptor};
use gca_core::trainer::{TrainConfig, TrainMode};

use crate::CliError;

/// Every tunable, with concrete values. Serialized into run directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: u32,
    pub radius: u32,
    pub metric: String,
    pub infusion_speed: f64,
    /// Sampling-chain length `T` for sample/complete.
    pub steps_t: usize,
    pub extra_steps: usize,
    pub t_max: usize,
    pub buffer_budget: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_every: u64,
    pub lr_decay_factor: f64,
    pub channels: Vec<usize>,
    pub kernel_radius: u32,
    pub train_steps: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub mode: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: 16,
            radius: 2,
            metric: "l1".into(),
            infusion_speed: 0.005,
            steps_t: 100,
            extra_steps: 5,
            t_max: 200,
            buffer_budget: 256,
            batch_size: 32,
            learning_rate: 5e-4,
            lr_decay_every: 10_000,
            lr_decay_factor: 0.5,
            channels: vec![1, 8, 16, 16, 8],
            kernel_radius: 1,
            train_steps: 10_000,
            checkpoint_every: 0,
            seed: 0,
            mode: "generation".into(),
        }
    }
}

/// Optional-field mirror of [`RunConfig`] for file and preset layering.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub grid: Option<u32>,
    pub radius: Option<u32>,
    pub metric: Option<String>,
    pub infusion_speed: Option<f64>,
    pub steps_t: Option<usize>,
    pub extra_steps: Option<usize>,
    pub t_max: Option<usize>,
    pub buffer_budget: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay_every: Option<u64>,
    pub lr_decay_factor: Option<f64>,
    pub channels: Option<Vec<usize>>,
    pub kernel_radius: Option<u32>,
    pub train_steps: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub seed: Option<u64>,
    pub mode: Option<String>,
}

impl RunConfig {
    pub fn apply(&mut self, overlay: &PartialConfig) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &overlay.$field { self.$field = v.clone(); })*
            };
        }
        take!(
            grid,
            radius,
            metric,
            infusion_speed,
            steps_t,
            extra_steps,
            t_max,
            buffer_budget,
            batch_size,
            learning_rate,
            lr_decay_every,
            lr_decay_factor,
            channels,
            kernel_radius,
            train_steps,
            checkpoint_every,
            seed,
            mode
        );
    }

    pub fn metric_value(&self) -> Result<Metric, CliError> {
        self.metric.parse().map_err(CliError::Validation)
    }

    pub fn mode_value(&self) -> Result<TrainMode, CliError> {
        match self.mode.as_str() {
            "generation" => Ok(TrainMode::Generation),
            "completion" => Ok(TrainMode::Completion),
            other => Err(CliError::Validation(format!(
                "unknown mode '{other}' (expected generation or completion)"
            ))),
        }
    }

    pub fn arch(&self) -> ArchDescriptor {
        ArchDescriptor {
            channels: self.channels.clone(),
            kernel_radius: self.kernel_radius,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let config = TrainConfig {
            buffer_budget: self.buffer_budget,
            batch_size: self.batch_size,
            extra_steps: self.extra_steps,
            t_max: self.t_max,
            infusion_speed: self.infusion_speed,
            total_steps: self.train_steps,
            seed: self.seed,
            mode: self.mode_value()?,
            spec_radius: self.radius,
            spec_metric: self.metric_value()?,
            arch: self.arch(),
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                decay_every: self.lr_decay_every,
                decay_factor: self.lr_decay_factor,
                ..AdamConfig::default()
            },
        };
        config
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).expect("serializable config");
        std::fs::write(path, json + "\n")
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}

/// Named hyperparameter bundles at desk-scale grid sizes.
pub fn preset(name: &str) -> Result<PartialConfig, CliError> {
    match name {
        "paper-generation" => Ok(PartialConfig {
            grid: Some(16),
            radius: Some(2),
            metric: Some("l1".into()),
            steps_t: Some(100),
            infusion_speed: Some(0.005),
            mode: Some("generation".into()),
            ..PartialConfig::default()
        }),
        "paper-completion" => Ok(PartialConfig {
            grid: Some(32),
            radius: Some(3),
            metric: Some("l1".into()),
            steps_t: Some(70),
            infusion_speed: Some(0.005),
            mode: Some("completion".into()),
            ..PartialConfig::default()
        }),
        other => Err(CliError::Validation(format!(
            "unknown preset '{other}' (expected paper-generation or paper-completion)"
        ))),
    }
}

pub fn load_config_file(path: &Path) -> Result<PartialConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("bad config {}: {e}", path.display())))
}

/// Seed precedence: explicit flag → config layers → `GCA_SEED` → 0.
pub fn env_seed_fallback() -> Option<u64> {
    std::env::var("GCA_SEED").ok().and_then(|v| v.parse().ok())
}
