//! Run configuration file (TOML). Command-line flags override its values.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tmnlab::data::SynthSpec;
use tmnlab::model::{Mode, ModelConfig};
use tmnlab::objectives::LossConfig;
use tmnlab::trainer::PhaseConfig;

use crate::failure::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Preset name or a full model table.
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    pub mode: Option<Mode>,
    pub data: DataConfig,
    /// Schedule preset the per-phase tables start from.
    #[serde(default = "default_schedule")]
    pub schedule: String,
    pub phase1: Option<PhaseOverride>,
    pub phase2: Option<PhaseOverride>,
    pub phase3: Option<PhaseOverride>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(String),
    Explicit(ModelConfig),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    /// Held-out file; without it a tenth of the training pairs is held out by id hash.
    pub val: Option<PathBuf>,
    #[serde(default = "default_strictness")]
    pub strictness: u8,
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    #[serde(default = "default_node_dim")]
    pub node_dim: usize,
    #[serde(default = "default_edge_dim")]
    pub edge_dim: usize,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
}

impl SynthConfig {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            n_pairs: self.count,
            node_dim: self.node_dim,
            edge_dim: self.edge_dim,
            max_nodes: self.max_nodes,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseOverride {
    pub batch_size: Option<usize>,
    pub max_batches_per_epoch: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub checkpoint_every: Option<usize>,
    /// Loss preset name ("snli3" or "semeval2").
    pub loss_preset: Option<String>,
    pub temperature: Option<f64>,
    pub w_pos: Option<f64>,
    pub w_dist: Option<f64>,
    pub w_mid: Option<f64>,
    pub theta_low: Option<f64>,
    pub theta_high: Option<f64>,
}

fn default_seed() -> u64 {
    0
}
fn default_model() -> ModelSpec {
    ModelSpec::Preset("desk".into())
}
fn default_schedule() -> String {
    "desk".into()
}
fn default_strictness() -> u8 {
    3
}
fn default_node_dim() -> usize {
    16
}
fn default_edge_dim() -> usize {
    8
}
fn default_max_nodes() -> usize {
    8
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        match (&self.data.train, &self.data.synth) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Failure::usage(
                    "config: [data] needs exactly one of `train` or `synth`",
                ))
            }
        }
        if self.data.val.is_some() && self.data.synth.is_some() {
            return Err(Failure::usage("config: `val` only applies to a `train` file"));
        }
        self.model_config()?;
        for phase in 1..=3 {
            self.phase_config(phase)?;
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig, Failure> {
        let mut config = match &self.model {
            ModelSpec::Preset(name) => ModelConfig::preset(name)
                .ok_or_else(|| Failure::usage(format!("config: unknown model preset {name:?}")))?,
            ModelSpec::Explicit(c) => c.clone(),
        };
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        config
            .validate()
            .map_err(|e| Failure::usage(format!("config: {e}")))?;
        Ok(config)
    }

    pub fn phase_config(&self, phase: u8) -> Result<PhaseConfig, Failure> {
        let mut c = PhaseConfig::preset(&self.schedule, phase).ok_or_else(|| {
            Failure::usage(format!("config: unknown schedule preset {:?}", self.schedule))
        })?;
        c.seed = self.seed;
        let o = match phase {
            1 => self.phase1.clone(),
            2 => self.phase2.clone(),
            _ => self.phase3.clone(),
        }
        .unwrap_or_default();
        if let Some(name) = &o.loss_preset {
            c.loss = LossConfig::preset(name)
                .ok_or_else(|| Failure::usage(format!("config: unknown loss preset {name:?}")))?;
        }
        set(&mut c.batch_size, o.batch_size);
        set(&mut c.max_batches_per_epoch, o.max_batches_per_epoch);
        set(&mut c.learning_rate, o.learning_rate);
        set(&mut c.max_epochs, o.max_epochs);
        set(&mut c.patience, o.patience);
        set(&mut c.checkpoint_every, o.checkpoint_every);
        set(&mut c.loss.temperature, o.temperature);
        set(&mut c.loss.w_pos, o.w_pos);
        set(&mut c.loss.w_dist, o.w_dist);
        set(&mut c.loss.w_mid, o.w_mid);
        set(&mut c.loss.theta_low, o.theta_low);
        set(&mut c.loss.theta_high, o.theta_high);
        c.validate()
            .map_err(|e| Failure::usage(format!("config: phase {phase}: {e}")))?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
