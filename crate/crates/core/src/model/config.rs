use std::fmt::Write as _;

use crate::data_io::Modality;
use crate::error::{Error, Result};
use crate::scalar::Precision;

/// Architecture hyper-parameters of one per-modality backbone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub modality: Modality,
    /// Samples per segment.
    pub input_len: usize,
    pub n_patches: usize,
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub stem_strides: Vec<usize>,
    pub precision: Precision,
}

pub const DEFAULT_EMBED_DIM: usize = 256;
pub const DESK_EMBED_DIM: usize = 32;

impl ModelConfig {
    /// Default geometry for a modality at its nominal rate: 30 patches.
    pub fn for_modality(modality: Modality, embed_dim: usize) -> Self {
        let stem_strides = match modality {
            Modality::Eeg | Modality::Ecg => vec![5, 5, 5],
            Modality::Resp => vec![2, 5],
        };
        let input_len = modality.nominal_segment_len();
        let n_patches = input_len / stem_strides.iter().product::<usize>();
        ModelConfig {
            modality,
            input_len,
            n_patches,
            embed_dim,
            encoder_depth: 4,
            decoder_depth: 2,
            n_heads: 4,
            ffn_mult: 4,
            stem_strides,
            precision: Precision::F32,
        }
    }

    pub fn desk(modality: Modality) -> Self {
        Self::for_modality(modality, DESK_EMBED_DIM)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.stem_strides.is_empty() || self.stem_strides.contains(&0) {
            return bad("stem strides must be positive".into());
        }
        for (name, v) in [
            ("input_len", self.input_len),
            ("n_patches", self.n_patches),
            ("embed_dim", self.embed_dim),
            ("encoder_depth", self.encoder_depth),
            ("decoder_depth", self.decoder_depth),
            ("n_heads", self.n_heads),
            ("ffn_mult", self.ffn_mult),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let stride: usize = self.stem_strides.iter().product();
        if self.input_len % stride != 0 || self.input_len / stride != self.n_patches {
            return bad(format!(
                "input_len {} with stride product {stride} does not give {} patches",
                self.input_len, self.n_patches
            ));
        }
        if self.embed_dim % self.n_heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.decoder_depth >= self.encoder_depth {
            return bad(format!(
                "decoder_depth {} must be smaller than encoder_depth {}",
                self.decoder_depth, self.encoder_depth
            ));
        }
        Ok(())
    }

    /// Samples covered by one patch.
    pub fn patch_len(&self) -> usize {
        self.stem_strides.iter().product()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    /// Channel width after each stem stage; the last equals `embed_dim`.
    pub fn stem_channels(&self) -> Vec<usize> {
        let s = self.stem_strides.len();
        (0..s)
            .map(|i| (self.embed_dim >> (s - 1 - i)).max(1))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let strides: Vec<String> = self.stem_strides.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "modality={}", self.modality);
        let _ = writeln!(out, "input_len={}", self.input_len);
        let _ = writeln!(out, "n_patches={}", self.n_patches);
        let _ = writeln!(out, "embed_dim={}", self.embed_dim);
        let _ = writeln!(out, "encoder_depth={}", self.encoder_depth);
        let _ = writeln!(out, "decoder_depth={}", self.decoder_depth);
        let _ = writeln!(out, "n_heads={}", self.n_heads);
        let _ = writeln!(out, "ffn_mult={}", self.ffn_mult);
        let _ = writeln!(out, "stem_strides={}", strides.join(","));
        let _ = writeln!(out, "precision={}", self.precision.as_str());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut modality = None;
        let mut nums = [None::<usize>; 7];
        let keys = [
            "input_len",
            "n_patches",
            "embed_dim",
            "encoder_depth",
            "decoder_depth",
            "n_heads",
            "ffn_mult",
        ];
        let mut strides = None;
        let mut precision = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("config line without '=': {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Schema(format!("{k}: not an integer: {v:?}")))
            };
            match k {
                "modality" => modality = Some(v.parse::<Modality>()?),
                "stem_strides" => {
                    strides = Some(
                        v.split(',')
                            .map(|s| num(s.trim()))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "precision" => {
                    precision = Some(
                        Precision::parse(v)
                            .ok_or_else(|| Error::Schema(format!("unknown precision {v:?}")))?,
                    )
                }
                _ => match keys.iter().position(|&key| key == k) {
                    Some(i) => nums[i] = Some(num(v)?),
                    None => return Err(Error::Schema(format!("unknown config key {k:?}"))),
                },
            }
        }
        let missing = |k: &str| Error::Schema(format!("config key {k:?} missing"));
        let get = |i: usize| nums[i].ok_or_else(|| missing(keys[i]));
        let cfg = ModelConfig {
            modality: modality.ok_or_else(|| missing("modality"))?,
            input_len: get(0)?,
            n_patches: get(1)?,
            embed_dim: get(2)?,
            encoder_depth: get(3)?,
            decoder_depth: get(4)?,
            n_heads: get(5)?,
            ffn_mult: get(6)?,
            stem_strides: strides.ok_or_else(|| missing("stem_strides"))?,
            precision: precision.ok_or_else(|| missing("precision"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
