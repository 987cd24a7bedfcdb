use std::path::Path;

use sentifeed::corpus::SampleOptions;
use sentifeed::encoders::ModelConfig;
use sentifeed::genctrl::{BeamOptions, TrainConfig};
use sentifeed::kaap::{DEFAULT_K_IMAGE, DEFAULT_K_TEXT};
use sentifeed::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    #[default]
    Desk,
    Wide,
}

/// Preset sizes with optional per-field overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    pub d_model: Option<usize>,
    pub d_embed: Option<usize>,
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_ffn_hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub max_seq_len: Option<usize>,
    pub patch_grid: Option<usize>,
    pub conv_channels: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Unset: 60 for the paper and wide presets, 10 for desk.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    /// Off trains without routing samples through their label's mask.
    pub controlled: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { epochs: None, batch_size: 16, learning_rate: 1e-3, clip_norm: None, controlled: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub x_percent: f64,
    pub n_control_layers: usize,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self { x_percent: 10.0, n_control_layers: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub beam_size: usize,
    /// Generated tokens, EOS included.
    pub max_len: usize,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let b = BeamOptions::default();
        Self { beam_size: b.beam_size, max_len: b.max_len }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionSection {
    pub k_img: usize,
    pub k_txt: usize,
    pub image_slot: usize,
    /// Upper end of the k range searched by `--select-k`.
    pub k_max: usize,
    /// Test samples averaged by `--select-k`.
    pub select_samples: usize,
}

impl Default for AttributionSection {
    fn default() -> Self {
        Self { k_img: DEFAULT_K_IMAGE, k_txt: DEFAULT_K_TEXT, image_slot: 0, k_max: 30, select_samples: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub folds: usize,
    /// Which fold is held out.
    pub fold: usize,
    pub max_text_len: usize,
    pub max_target_len: usize,
    pub vocab_min_count: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SampleOptions::default();
        Self { folds: 5, fold: 0, max_text_len: s.max_text_len, max_target_len: s.max_target_len, vocab_min_count: 1 }
    }
}

/// Everything a command needs besides its input paths. Loaded from one TOML
/// file; command-line flags override individual fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub control: ControlSection,
    pub generation: GenerationSection,
    pub attribution: AttributionSection,
    pub data: DataSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn epochs(&self) -> usize {
        self.train.epochs.unwrap_or(match self.model.preset {
            Preset::Desk => 10,
            Preset::Paper | Preset::Wide => 60,
        })
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let m = &self.model;
        let mut c = match m.preset {
            Preset::Paper => ModelConfig::paper(vocab_size),
            Preset::Desk => ModelConfig::desk(vocab_size),
            Preset::Wide => ModelConfig::wide(vocab_size),
        };
        c.d_model = m.d_model.unwrap_or(c.d_model);
        c.d_embed = m.d_embed.unwrap_or(c.d_embed);
        c.n_layers = m.n_layers.unwrap_or(c.n_layers);
        c.n_heads = m.n_heads.unwrap_or(c.n_heads);
        c.d_ffn_hidden = m.d_ffn_hidden.unwrap_or(c.d_ffn_hidden);
        c.dropout = m.dropout.unwrap_or(c.dropout);
        c.max_seq_len = m.max_seq_len.unwrap_or(c.max_seq_len);
        c.patch_grid = m.patch_grid.unwrap_or(c.patch_grid);
        c.conv_channels = m.conv_channels.unwrap_or(c.conv_channels);
        c.control_x = self.control.x_percent;
        c.n_control_layers = self.control.n_control_layers;
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs(),
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: self.seed,
            controlled: self.train.controlled,
            clip_norm: self.train.clip_norm,
            fold: Some(self.data.fold),
        }
    }

    pub fn beam(&self) -> BeamOptions {
        BeamOptions { beam_size: self.generation.beam_size, max_len: self.generation.max_len, ..BeamOptions::default() }
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions { max_text_len: self.data.max_text_len, max_target_len: self.data.max_target_len }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.generation.beam_size == 0 || self.generation.max_len == 0 {
            return bad("beam_size and max_len must be positive".into());
        }
        if self.data.folds < 2 || self.data.fold >= self.data.folds {
            return bad(format!("fold {} of {} folds", self.data.fold, self.data.folds));
        }
        if self.attribution.k_img < 2 || self.attribution.k_txt < 2 || self.attribution.k_max < 3 {
            return bad("k_img and k_txt need at least 2 segments, k_max at least 3".into());
        }
        if self.attribution.image_slot >= sentifeed::corpus::IMAGE_SLOTS {
            return bad(format!("image_slot {} out of range", self.attribution.image_slot));
        }
        if self.train.batch_size == 0 || !(self.train.learning_rate > 0.0) {
            return bad("batch_size and learning_rate must be positive".into());
        }
        if !(0.0..=100.0).contains(&self.control.x_percent) {
            return bad(format!("x_percent {} outside [0, 100]", self.control.x_percent));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_setup() {
        let c = RunConfig::default();
        assert_eq!((c.train.batch_size, c.train.learning_rate), (16, 1e-3));
        assert_eq!((c.generation.beam_size, c.attribution.k_img, c.attribution.k_txt), (5, 5, 20));
        assert_eq!((c.control.x_percent, c.control.n_control_layers, c.data.folds), (10.0, 1, 5));
        assert_eq!(c.epochs(), 10);
        let paper = RunConfig { model: ModelSection { preset: Preset::Paper, ..Default::default() }, ..c };
        assert_eq!(paper.epochs(), 60);
        let m = paper.model_config(50).unwrap();
        assert_eq!((m.d_model, m.d_embed, m.n_layers, m.n_heads), (128, 100, 3, 8));
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let c =
            RunConfig::from_toml("seed = 7\n[model]\npreset = \"paper\"\nn_layers = 1\n[control]\nx_percent = 0.0\n")
                .unwrap();
        assert_eq!(c.seed, 7);
        let m = c.model_config(40).unwrap();
        assert_eq!((m.n_layers, m.d_model, m.control_x), (1, 128, 0.0));
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[model]\nlayers = 2\n").is_err());
        assert!(RunConfig::from_toml("[data]\nfolds = 3\nfold = 3\n").unwrap().validate().is_err());
    }
}
