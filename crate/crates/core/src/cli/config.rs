use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_io::{Modality, DEFAULT_TRAIN_RATIO};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, DESK_EMBED_DIM};
use crate::scalar::Precision;
use crate::ssl::SslConfig;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Cohort directory holding `manifest.csv` and `signals/`; defaults to
    /// the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Directory to read `checkpoint_<MOD>.psgm` from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Directory to read `<outcome>_<MOD>.txt` disease vectors from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vectors: Option<PathBuf>,
    /// Score table to read.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    /// "f32" or "f64".
    pub precision: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        let base = ModelConfig::desk(Modality::Ecg);
        ModelSection {
            embed_dim: DESK_EMBED_DIM,
            encoder_depth: base.encoder_depth,
            decoder_depth: base.decoder_depth,
            n_heads: base.n_heads,
            ffn_mult: base.ffn_mult,
            precision: Precision::F32.as_str().into(),
        }
    }
}

impl ModelSection {
    pub fn precision(&self) -> Result<Precision> {
        Precision::parse(&self.precision)
            .ok_or_else(|| Error::Config(format!("unknown precision {:?}", self.precision)))
    }

    pub fn model_config(&self, modality: Modality) -> Result<ModelConfig> {
        let config = ModelConfig {
            encoder_depth: self.encoder_depth,
            decoder_depth: self.decoder_depth,
            n_heads: self.n_heads,
            ffn_mult: self.ffn_mult,
            precision: self.precision()?,
            ..ModelConfig::for_modality(modality, self.embed_dim)
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub train_ratio: f64,
    /// Z-score logistic predictors with training-split moments.
    pub standardize: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            train_ratio: DEFAULT_TRAIN_RATIO,
            standardize: false,
        }
    }
}

/// Everything a subcommand needs. The top-level seed drives the split, the
/// synthetic cohort and SSL training; their own `seed` keys are overwritten
/// when the config is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub modalities: Vec<Modality>,
    /// Empty selects every outcome in the manifest.
    pub outcomes: Vec<String>,
    pub paths: PathsConfig,
    pub model: ModelSection,
    pub ssl: SslConfig,
    pub synth: SynthConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            modalities: Modality::ALL.to_vec(),
            outcomes: Vec::new(),
            paths: PathsConfig::default(),
            model: ModelSection::default(),
            ssl: SslConfig::desk(),
            synth: SynthConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Overlays `over` onto `base`, recursing into tables; arrays and scalars
/// are replaced whole.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses a config file's text. Keys it leaves out keep the values of
    /// `RunConfig::default()`, section by section.
    pub fn parse(text: &str) -> Result<Self> {
        let over: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        let mut table = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, over);
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Config("no modality selected".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if !(self.eval.train_ratio > 0.0 && self.eval.train_ratio < 1.0) {
            return Err(Error::Config(format!(
                "train_ratio must lie in (0, 1), got {}",
                self.eval.train_ratio
            )));
        }
        self.model.precision()?;
        self.ssl.validate()?;
        self.synth.validate()
    }
}

pub(crate) fn one_line(s: &str) -> String {
    s.split('\n')
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("; ")
}
