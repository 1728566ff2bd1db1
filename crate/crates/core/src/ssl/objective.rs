use rayon::prelude::*;

use super::loss::tcr_loss_and_grad;
use super::masks::{sample_masks, MaskPlan};
use super::{LossReport, SslConfig};
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Bound, ModelConfig, Network, Parameters};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

/// The self-supervised objective for one mini-batch with its masks and
/// full-signal targets frozen.
///
/// Targets are computed once from the parameters passed to [`new`]; they
/// are constants for [`evaluate`] and [`gradient`], so perturbing the
/// parameters (as a finite-difference check does) leaves them untouched.
///
/// [`new`]: BatchObjective::new
/// [`evaluate`]: BatchObjective::evaluate
/// [`gradient`]: BatchObjective::gradient
pub struct BatchObjective<'a, T> {
    config: &'a ModelConfig,
    ssl: &'a SslConfig,
    samples: Vec<Vec<T>>,
    masks: Vec<Vec<MaskPlan>>,
    targets: Vec<Matrix<T>>,
}

struct SampleGraph<T> {
    tape: Tape<T>,
    bound: Bound,
    similarity: Var,
    pooled: Vec<Var>,
}

impl<'a, T: Scalar> BatchObjective<'a, T> {
    pub fn new(
        batch: Vec<Vec<T>>,
        params: &Parameters<T>,
        config: &'a ModelConfig,
        ssl: &'a SslConfig,
        seed: u64,
    ) -> Result<Self> {
        ssl.validate()?;
        if batch.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch of {} segments; the coding-rate term needs at least 2",
                batch.len()
            )));
        }
        let net = Network::new(config, params)?;
        let masks = (0..batch.len())
            .map(|i| {
                sample_masks(
                    config.n_patches,
                    ssl.mask_ratio,
                    ssl.n_permutations,
                    derive_seed(seed, i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let targets = batch
            .par_iter()
            .map(|x| {
                let p = net.patchify(x)?;
                Ok(net.encode(&p, true)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BatchObjective {
            config,
            ssl,
            samples: batch,
            masks,
            targets,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }

    pub fn masks(&self) -> &[Vec<MaskPlan>] {
        &self.masks
    }

    pub fn targets(&self) -> &[Matrix<T>] {
        &self.targets
    }

    fn forward_sample(&self, net: &Network<'_, T>, i: usize) -> Result<SampleGraph<T>> {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let patches = net.stem(&mut tape, &bound, &self.samples[i])?;
        let token = net.mask_token(&bound);
        let k = self.masks[i].len();
        let mut sims = Vec::with_capacity(k);
        let mut pooled = Vec::with_capacity(k);
        for plan in &self.masks[i] {
            let masked = tape.replace_rows(patches, token, &plan.bits);
            let e = net.encoder(&mut tape, &bound, masked, true);
            let z = net.decoder(&mut tape, &bound, e);
            let sim = if self.ssl.masked_only {
                tape.cosine_mean_rows(z, &self.targets[i], &plan.bits)
            } else {
                tape.cosine_mean(z, &self.targets[i])
            };
            sims.push(sim);
            let m = tape.mean_rows(z);
            pooled.push(tape.normalize_rows(m));
        }
        let mut sum = sims[0];
        for &s in &sims[1..] {
            sum = tape.add(sum, s);
        }
        let similarity = tape.scale(sum, T::one() / T::of_usize(k));
        if !tape.value(similarity).is_finite() {
            return Err(Error::NonFinite(format!("similarity of batch sample {i}")));
        }
        Ok(SampleGraph {
            tape,
            bound,
            similarity,
            pooled,
        })
    }

    fn forward(&self, params: &Parameters<T>) -> Result<Vec<SampleGraph<T>>> {
        let net = Network::new(self.config, params)?;
        (0..self.samples.len())
            .into_par_iter()
            .map(|i| self.forward_sample(&net, i))
            .collect()
    }

    /// View k's d x b matrix of pooled unit-norm decoded embeddings.
    fn view_matrix(graphs: &[SampleGraph<T>], k: usize) -> Matrix<T> {
        let d = graphs[0].tape.value(graphs[0].pooled[k]).cols();
        let b = graphs.len();
        Matrix::from_fn(d, b, |r, c| {
            graphs[c].tape.value(graphs[c].pooled[k])[(0, r)]
        })
    }

    fn terms(&self, graphs: &[SampleGraph<T>], want_grad: bool) -> Result<(T, T, Vec<Matrix<T>>)> {
        let b = T::of_usize(graphs.len());
        let similarity = graphs
            .iter()
            .map(|g| g.tape.value(g.similarity)[(0, 0)])
            .sum::<T>()
            / b;
        let k = self.ssl.n_permutations;
        let mut tcr = T::zero();
        let mut grads = Vec::new();
        for view in 0..k {
            let z = Self::view_matrix(graphs, view);
            let (v, g) = tcr_loss_and_grad(&z, T::lit(self.ssl.tcr_epsilon))?;
            tcr += v;
            if want_grad {
                grads.push(g);
            }
        }
        Ok((similarity, tcr / T::of_usize(k), grads))
    }

    pub fn evaluate(&self, params: &Parameters<T>) -> Result<LossReport> {
        let graphs = self.forward(params)?;
        let (sim, tcr, _) = self.terms(&graphs, false)?;
        LossReport::compose(sim.as_f64(), tcr.as_f64(), self.ssl.tcr_weight, 0)
    }

    /// Loss and its gradient with respect to every parameter tensor (same
    /// order as [`Parameters::tensors`]).
    pub fn gradient(&self, params: &Parameters<T>) -> Result<(LossReport, Vec<Matrix<T>>)> {
        let graphs = self.forward(params)?;
        let (sim, tcr, tcr_grads) = self.terms(&graphs, true)?;
        let report = LossReport::compose(sim.as_f64(), tcr.as_f64(), self.ssl.tcr_weight, 0)?;

        let b = graphs.len();
        let k = self.ssl.n_permutations;
        let sim_seed = -T::one() / T::of_usize(b);
        let tcr_seed = -T::lit(self.ssl.tcr_weight) / T::of_usize(k);
        let per_sample: Vec<Gradients<T>> = graphs
            .par_iter()
            .enumerate()
            .map(|(i, g)| {
                let mut seeds = Vec::with_capacity(1 + k);
                seeds.push((
                    g.similarity,
                    Matrix::from_vec(1, 1, vec![sim_seed]).expect("1x1"),
                ));
                for (view, &z) in g.pooled.iter().enumerate() {
                    let d = tcr_grads[view].rows();
                    let col = Matrix::from_fn(1, d, |_, r| tcr_seed * tcr_grads[view][(r, i)]);
                    seeds.push((z, col));
                }
                g.tape.backward(&seeds)
            })
            .collect();

        // order-fixed reduction over the batch
        let mut total: Vec<Matrix<T>> = params
            .tensors()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        for (g, grads) in graphs.iter().zip(&per_sample) {
            for (acc, &v) in total.iter_mut().zip(g.bound.vars()) {
                if let Some(gm) = grads.get(v) {
                    acc.add_assign(gm);
                }
            }
        }
        Ok((report, total))
    }
}
