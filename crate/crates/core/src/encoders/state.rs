use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{text, visual, ModelConfig};
use crate::autodiff::ParamStore;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::genctrl::{build_control_masks, register_decoders, ControlMasks};

pub const MODEL_FILE_VERSION: u32 = 1;

/// Everything needed to run or resume a model: hyperparameters, vocabulary,
/// named parameters and the fixed control masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub version: u32,
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    pub params: ParamStore,
    /// One mask pair per control layer.
    pub masks: Vec<ControlMasks>,
    pub seed: u64,
    /// Optimizer steps taken so far.
    pub trained_steps: u64,
}

impl ModelState {
    pub fn new(config: ModelConfig, vocabulary: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocabulary.len() {
            return Err(Error::InvalidArgument(format!(
                "config vocab_size {} but vocabulary has {} entries",
                config.vocab_size,
                vocabulary.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        text::register_embedding(&mut params, &config, &mut rng);
        text::register(&mut params, &config, &mut rng);
        visual::register(&mut params, &config, &mut rng);
        register_decoders(&mut params, &config, &mut rng);
        let masks = (0..config.n_control_layers)
            .map(|l| build_control_masks(config.d_model, config.control_x, mask_seed(seed, l)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { version: MODEL_FILE_VERSION, config, vocabulary, params, masks, seed, trained_steps: 0 })
    }

    pub fn is_trained(&self) -> bool {
        self.trained_steps > 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a model file and checks it against the layout its own config
    /// implies, and against `expected` when given.
    pub fn from_json(json: &str, expected: Option<&ModelConfig>) -> Result<Self> {
        let mut state: ModelState = serde_json::from_str(json)?;
        if state.version != MODEL_FILE_VERSION {
            return Err(Error::ModelFile(format!(
                "version {} is not the supported version {MODEL_FILE_VERSION}",
                state.version
            )));
        }
        if let Some(want) = expected {
            if want != &state.config {
                return Err(Error::ModelFile(format!(
                    "config mismatch: file has {:?}, expected {want:?}",
                    state.config
                )));
            }
        }
        state.params.reindex();
        state.vocabulary.reindex();
        let layout = ModelState::new(state.config.clone(), state.vocabulary.clone(), state.seed)
            .map_err(|e| Error::ModelFile(format!("stored config is invalid: {e}")))?;
        let shapes = |p: &ParamStore| p.iter().map(|(_, n, m)| (n.to_string(), m.shape())).collect::<Vec<_>>();
        if shapes(&layout.params) != shapes(&state.params) {
            return Err(Error::ModelFile("parameter names or shapes do not match the config".into()));
        }
        if state.masks != layout.masks {
            return Err(Error::ModelFile("control masks do not match the config and seed".into()));
        }
        if state.params.iter().any(|(_, _, m)| !m.is_finite()) {
            return Err(Error::ModelFile("non-finite parameter values".into()));
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json, expected)
    }
}

fn mask_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (0x6d61_736b_0000_0000 + layer as u64)
}
