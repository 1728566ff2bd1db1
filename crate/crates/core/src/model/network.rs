use rayon::prelude::*;

use super::config::ModelConfig;
use super::params::{Block, Layout, Linear, Parameters};
use crate::autodiff::{Tape, Var, NORM_FLOOR};
use crate::data_io::{Modality, Segment};
use crate::error::{Error, Result};
use crate::linalg::{l2_norm, Matrix};
use crate::scalar::Scalar;

/// An n x d grid of patch tokens (stem output, encoder output or decoder
/// output).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid<T>(pub Matrix<T>);

impl<T: Scalar> PatchGrid<T> {
    pub fn new(m: Matrix<T>) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::NonFinite("patch grid".into()));
        }
        Ok(PatchGrid(m))
    }

    pub fn n_patches(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }
}

/// Unit-norm latent vector of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEmbedding<T> {
    pub subject_id: String,
    pub modality: Modality,
    pub segment_index: usize,
    pub vector: Vec<T>,
}

/// Parameters paired with their config and layout, ready to run forward
/// passes on a tape.
pub struct Network<'p, T> {
    config: &'p ModelConfig,
    params: &'p Parameters<T>,
    layout: Layout,
}

/// Parameter leaves of one tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn get(&self, i: usize) -> Var {
        self.vars[i]
    }
}

impl<'p, T: Scalar> Network<'p, T> {
    pub fn new(config: &'p ModelConfig, params: &'p Parameters<T>) -> Result<Self> {
        config.validate()?;
        params.check_schema(config)?;
        let (layout, _) = Layout::build(config);
        Ok(Network {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    pub fn params(&self) -> &Parameters<T> {
        self.params
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .params
                .tensors()
                .iter()
                .map(|m| tape.leaf(m.clone()))
                .collect(),
        }
    }

    pub fn mask_token(&self, b: &Bound) -> Var {
        b.get(self.layout.mask_token)
    }

    fn linear(&self, t: &mut Tape<T>, b: &Bound, x: Var, l: Linear) -> Var {
        let y = t.matmul(x, b.get(l.w));
        t.add_row(y, b.get(l.b))
    }

    /// Residual stem: each stage merges `stride` consecutive rows, projects
    /// them, then applies a pre-norm residual MLP. Row `r` of the output only
    /// sees input samples `[r*P, (r+1)*P)` with `P` the stride product.
    pub fn stem(&self, t: &mut Tape<T>, b: &Bound, samples: &[T]) -> Result<Var> {
        if samples.len() != self.config.input_len {
            return Err(Error::Shape(format!(
                "segment has {} samples, model expects {}",
                samples.len(),
                self.config.input_len
            )));
        }
        let mut rows = samples.len();
        let mut width = 1;
        let mut x = t.leaf(Matrix::from_vec(rows, 1, samples.to_vec())?);
        for st in &self.layout.stem {
            rows /= st.stride;
            x = t.reshape(x, rows, width * st.stride);
            let h = self.linear(t, b, x, st.proj);
            let n = t.layer_norm(h, b.get(st.norm.g), b.get(st.norm.b));
            let f = self.linear(t, b, n, st.fc1);
            let f = t.gelu(f);
            let f = self.linear(t, b, f, st.fc2);
            x = t.add(h, f);
            width = t.value(x).cols();
        }
        Ok(x)
    }

    fn block(&self, t: &mut Tape<T>, b: &Bound, blk: &Block, x: Var) -> Var {
        let heads = self.config.n_heads;
        let dh = self.config.head_dim();
        let h = t.layer_norm(x, b.get(blk.ln1.g), b.get(blk.ln1.b));
        let q = self.linear(t, b, h, blk.q);
        let k = self.linear(t, b, h, blk.k);
        let v = self.linear(t, b, h, blk.v);
        let scale = T::one() / T::of_usize(dh).sqrt();
        let outs: Vec<Var> = (0..heads)
            .map(|hd| {
                let qh = t.slice_cols(q, hd * dh, dh);
                let kh = t.slice_cols(k, hd * dh, dh);
                let vh = t.slice_cols(v, hd * dh, dh);
                let s = t.matmul_nt(qh, kh);
                let s = t.scale(s, scale);
                let p = t.softmax_rows(s);
                t.matmul(p, vh)
            })
            .collect();
        let a = if outs.len() == 1 {
            outs[0]
        } else {
            t.concat_cols(&outs)
        };
        let a = self.linear(t, b, a, blk.o);
        let x = t.add(x, a);
        let h = t.layer_norm(x, b.get(blk.ln2.g), b.get(blk.ln2.b));
        let f = self.linear(t, b, h, blk.fc1);
        let f = t.gelu(f);
        let f = self.linear(t, b, f, blk.fc2);
        t.add(x, f)
    }

    /// Optional position embeddings, encoder blocks, final norm.
    pub fn encoder(&self, t: &mut Tape<T>, b: &Bound, x: Var, use_positions: bool) -> Var {
        let mut x = if use_positions {
            t.add(x, b.get(self.layout.pos_embed))
        } else {
            x
        };
        for blk in &self.layout.encoder {
            x = self.block(t, b, blk, x);
        }
        t.layer_norm(
            x,
            b.get(self.layout.encoder_norm.g),
            b.get(self.layout.encoder_norm.b),
        )
    }

    pub fn decoder(&self, t: &mut Tape<T>, b: &Bound, x: Var) -> Var {
        let mut x = x;
        for blk in &self.layout.decoder {
            x = self.block(t, b, blk, x);
        }
        t.layer_norm(
            x,
            b.get(self.layout.decoder_norm.g),
            b.get(self.layout.decoder_norm.b),
        )
    }

    fn check_grid(&self, g: &PatchGrid<T>) -> Result<()> {
        let want = (self.config.n_patches, self.config.embed_dim);
        if g.0.shape() != want {
            return Err(Error::Shape(format!(
                "patch grid {:?}, expected {want:?}",
                g.0.shape()
            )));
        }
        Ok(())
    }

    pub fn patchify(&self, samples: &[T]) -> Result<PatchGrid<T>> {
        let mut t = Tape::new();
        let b = self.bind(&mut t);
        let x = self.stem(&mut t, &b, samples)?;
        PatchGrid::new(t.value(x).clone())
    }

    pub fn encode(&self, patches: &PatchGrid<T>, use_positions: bool) -> Result<PatchGrid<T>> {
        self.check_grid(patches)?;
        let mut t = Tape::new();
        let b = self.bind(&mut t);
        let x = t.leaf(patches.0.clone());
        let e = self.encoder(&mut t, &b, x, use_positions);
        PatchGrid::new(t.value(e).clone())
    }

    pub fn decode(&self, latent: &PatchGrid<T>) -> Result<PatchGrid<T>> {
        self.check_grid(latent)?;
        let mut t = Tape::new();
        let b = self.bind(&mut t);
        let x = t.leaf(latent.0.clone());
        let e = self.decoder(&mut t, &b, x);
        PatchGrid::new(t.value(e).clone())
    }

    /// Full-signal embedding of one segment: stem, positions, encoder, pool.
    pub fn embed(&self, samples: &[T]) -> Result<Vec<T>> {
        let mut t = Tape::new();
        let b = self.bind(&mut t);
        let x = self.stem(&mut t, &b, samples)?;
        let e = self.encoder(&mut t, &b, x, true);
        let grid = PatchGrid::new(t.value(e).clone())?;
        pool_segment(&grid)
    }
}

pub fn patchify<T: Scalar>(
    segment: &Segment,
    params: &Parameters<T>,
    config: &ModelConfig,
) -> Result<PatchGrid<T>> {
    let samples: Vec<T> = segment.samples.iter().map(|&s| T::lit(s as f64)).collect();
    Network::new(config, params)?.patchify(&samples)
}

pub fn encode<T: Scalar>(
    patches: &PatchGrid<T>,
    params: &Parameters<T>,
    config: &ModelConfig,
    use_positions: bool,
) -> Result<PatchGrid<T>> {
    Network::new(config, params)?.encode(patches, use_positions)
}

pub fn decode<T: Scalar>(
    latent: &PatchGrid<T>,
    params: &Parameters<T>,
    config: &ModelConfig,
) -> Result<PatchGrid<T>> {
    Network::new(config, params)?.decode(latent)
}

/// Mean over patch rows, then unit L2 norm.
pub fn pool_segment<T: Scalar>(e: &PatchGrid<T>) -> Result<Vec<T>> {
    let m = e.matrix();
    if !m.is_finite() {
        return Err(Error::NonFinite("encoder output".into()));
    }
    let n = T::of_usize(m.rows());
    let mut mean = vec![T::zero(); m.cols()];
    for i in 0..m.rows() {
        for (o, &v) in mean.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    for v in &mut mean {
        *v /= n;
    }
    let norm = l2_norm(&mean);
    if !(norm > T::lit(NORM_FLOOR)) {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(mean.into_iter().map(|v| v / norm).collect())
}

/// Embeds every segment; parallel over segments, output in input order.
pub fn embed_segments<T: Scalar>(
    segments: &[Segment],
    params: &Parameters<T>,
    config: &ModelConfig,
) -> Result<Vec<SegmentEmbedding<T>>> {
    let net = Network::new(config, params)?;
    segments
        .par_iter()
        .map(|s| {
            if s.modality != config.modality {
                return Err(Error::InvalidArgument(format!(
                    "{} segment given to a {} model",
                    s.modality, config.modality
                )));
            }
            let samples: Vec<T> = s.samples.iter().map(|&v| T::lit(v as f64)).collect();
            Ok(SegmentEmbedding {
                subject_id: s.subject_id.clone(),
                modality: s.modality,
                segment_index: s.index,
                vector: net.embed(&samples)?,
            })
        })
        .collect()
}
