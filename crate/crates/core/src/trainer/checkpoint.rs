use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::model::{ModelConfig, ModelParams};

use super::adam::AdamState;
use super::TrainError;

pub const CHECKPOINT_FORMAT: &str = "tmnlab-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    #[serde(flatten)]
    pub tensor: Tensor,
}

/// Parameters, optimizer moments and their provenance after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelConfig,
    pub seed: u64,
    pub phase: u8,
    /// Last completed epoch, 1-based.
    pub epoch: usize,
    pub params: Vec<NamedTensor>,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn new(
        model: &ModelConfig,
        params: &ModelParams,
        optimizer: &AdamState,
        seed: u64,
        phase: u8,
        epoch: usize,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            model: model.clone(),
            seed,
            phase,
            epoch,
            params: params
                .named()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    tensor: t.clone(),
                })
                .collect(),
            optimizer: optimizer.clone(),
        }
    }

    /// Writes via a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        }
        let text = serde_json::to_string(self)
            .map_err(|e| TrainError::Checkpoint(format!("serialize: {e}")))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(|e| TrainError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        #[derive(Deserialize)]
        struct Header {
            format: String,
        }
        let header: Header = serde_json::from_str(&text).map_err(|e| {
            TrainError::Checkpoint(format!("{}: {e}", path.display()))
        })?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(TrainError::Checkpoint(format!(
                "{}: format {:?}, expected {CHECKPOINT_FORMAT:?}",
                path.display(),
                header.format
            )));
        }
        serde_json::from_str(&text)
            .map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Parameters checked against `expected`; the first differing tensor is named.
    pub fn params_for(&self, expected: &ModelConfig) -> Result<ModelParams, TrainError> {
        let named = self
            .params
            .iter()
            .map(|n| (n.name.clone(), n.tensor.clone()))
            .collect();
        let params = ModelParams::from_named(expected, named)?;
        if !self.optimizer.matches(params.tensors()) {
            return Err(TrainError::Checkpoint(
                "optimizer moments do not match the parameters".into(),
            ));
        }
        Ok(params)
    }

    /// Parameters under the checkpoint's own configuration.
    pub fn params(&self) -> Result<ModelParams, TrainError> {
        self.params_for(&self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelError;

    fn sample() -> (ModelConfig, ModelParams, AdamState) {
        let config = ModelConfig::desk();
        let params = ModelParams::init(&config, 21).unwrap();
        let mut state = AdamState::new(params.tensors());
        for (m, p) in state.first.iter_mut().zip(params.tensors()) {
            for (x, y) in m.data_mut().iter_mut().zip(p.data()) {
                *x = y / 3.0 + 1e-17;
            }
        }
        state.step = 7;
        (config, params, state)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (config, params, state) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let ck = Checkpoint::new(&config, &params, &state, 5, 2, 3);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let loaded = back.params_for(&config).unwrap();
        for (a, b) in loaded.tensors().iter().zip(params.tensors()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.optimizer, state);
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let (config, params, state) = sample();
        let ck = Checkpoint::new(&config, &params, &state, 5, 2, 3);
        let wider = ModelConfig {
            node_state_dim: 48,
            ..config
        };
        match ck.params_for(&wider) {
            Err(TrainError::Model(ModelError::Mismatch { tensor, .. })) => {
                assert_eq!(tensor, "encoder.node.w0")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_format_is_rejected() {
        let (config, params, state) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut ck = Checkpoint::new(&config, &params, &state, 5, 2, 3);
        ck.format = "tmnlab-checkpoint/0".into();
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(TrainError::Checkpoint(_))));
    }
}
