use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

const EMBED_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    FanIn,
    Zeros,
    Ones,
    SmallNormal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct StemStage {
    pub stride: usize,
    pub proj: Linear,
    pub norm: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub ln1: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Index map from architectural roles to parameter slots.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub stem: Vec<StemStage>,
    pub pos_embed: usize,
    pub mask_token: usize,
    pub encoder: Vec<Block>,
    pub encoder_norm: Norm,
    pub decoder: Vec<Block>,
    pub decoder_norm: Norm,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn push(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(ParamSpec {
            name,
            rows,
            cols,
            init,
        });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.push(format!("{prefix}.w"), fan_in, fan_out, Init::FanIn),
            b: self.push(format!("{prefix}.b"), 1, fan_out, Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, width: usize) -> Norm {
        Norm {
            g: self.push(format!("{prefix}.g"), 1, width, Init::Ones),
            b: self.push(format!("{prefix}.b"), 1, width, Init::Zeros),
        }
    }

    fn block(&mut self, prefix: &str, d: usize, hidden: usize) -> Block {
        Block {
            ln1: self.norm(&format!("{prefix}.ln1"), d),
            q: self.linear(&format!("{prefix}.attn.q"), d, d),
            k: self.linear(&format!("{prefix}.attn.k"), d, d),
            v: self.linear(&format!("{prefix}.attn.v"), d, d),
            o: self.linear(&format!("{prefix}.attn.o"), d, d),
            ln2: self.norm(&format!("{prefix}.ln2"), d),
            fc1: self.linear(&format!("{prefix}.ffn.fc1"), d, hidden),
            fc2: self.linear(&format!("{prefix}.ffn.fc2"), hidden, d),
        }
    }
}

impl Layout {
    pub(crate) fn build(config: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
        let mut b = Builder { specs: Vec::new() };
        let d = config.embed_dim;
        let mut c_in = 1;
        let mut stem = Vec::new();
        for (i, (&stride, c)) in config
            .stem_strides
            .iter()
            .zip(config.stem_channels())
            .enumerate()
        {
            let p = format!("stem.{i}");
            stem.push(StemStage {
                stride,
                proj: b.linear(&format!("{p}.proj"), stride * c_in, c),
                norm: b.norm(&format!("{p}.res.norm"), c),
                fc1: b.linear(&format!("{p}.res.fc1"), c, 2 * c),
                fc2: b.linear(&format!("{p}.res.fc2"), 2 * c, c),
            });
            c_in = c;
        }
        let pos_embed = b.push("pos_embed".into(), config.n_patches, d, Init::SmallNormal);
        let mask_token = b.push("mask_token".into(), 1, d, Init::SmallNormal);
        let hidden = config.ffn_mult * d;
        let encoder = (0..config.encoder_depth)
            .map(|l| b.block(&format!("encoder.layers.{l}"), d, hidden))
            .collect();
        let encoder_norm = b.norm("encoder.norm", d);
        let decoder = (0..config.decoder_depth)
            .map(|l| b.block(&format!("decoder.layers.{l}"), d, hidden))
            .collect();
        let decoder_norm = b.norm("decoder.norm", d);
        (
            Layout {
                stem,
                pos_embed,
                mask_token,
                encoder,
                encoder_norm,
                decoder,
                decoder_norm,
            },
            b.specs,
        )
    }
}

/// Tensor schema implied by a config, in storage order.
pub fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    Layout::build(config).1
}

/// Named model tensors; shapes are fully determined by the config.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    names: Vec<String>,
    tensors: Vec<Matrix<T>>,
}

impl<T: Scalar> Parameters<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, EMBED_INIT_STD).expect("valid std");
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for s in specs {
            let m = match s.init {
                Init::Zeros => Matrix::zeros(s.rows, s.cols),
                Init::Ones => Matrix::from_fn(s.rows, s.cols, |_, _| T::one()),
                Init::FanIn => {
                    let bound = 1.0 / (s.rows as f64).sqrt();
                    Matrix::from_fn(s.rows, s.cols, |_, _| {
                        T::lit(rng.random_range(-bound..bound))
                    })
                }
                Init::SmallNormal => {
                    Matrix::from_fn(s.rows, s.cols, |_, _| T::lit(normal.sample(&mut rng)))
                }
            };
            names.push(s.name);
            tensors.push(m);
        }
        Ok(Parameters { names, tensors })
    }

    /// Assembles parameters from raw tensors, checking them against the
    /// config's schema.
    pub fn from_tensors(config: &ModelConfig, named: Vec<(String, Matrix<T>)>) -> Result<Self> {
        let specs = param_specs(config);
        if specs.len() != named.len() {
            return Err(Error::Schema(format!(
                "{} tensors, schema expects {}",
                named.len(),
                specs.len()
            )));
        }
        for (s, (name, m)) in specs.iter().zip(&named) {
            if &s.name != name || m.shape() != (s.rows, s.cols) {
                return Err(Error::Schema(format!(
                    "tensor {name:?} {:?} does not match expected {:?} {:?}",
                    m.shape(),
                    s.name,
                    (s.rows, s.cols)
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("tensor {name}")));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Parameters { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    /// Checks shapes against `config` without consuming.
    pub fn check_schema(&self, config: &ModelConfig) -> Result<()> {
        let specs = param_specs(config);
        if specs.len() != self.tensors.len()
            || specs
                .iter()
                .zip(self.names.iter().zip(&self.tensors))
                .any(|(s, (n, t))| &s.name != n || t.shape() != (s.rows, s.cols))
        {
            return Err(Error::Schema(
                "parameters do not match the model configuration".into(),
            ));
        }
        Ok(())
    }
}
