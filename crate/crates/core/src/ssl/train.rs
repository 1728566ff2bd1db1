use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::objective::BatchObjective;
use super::{LossReport, SslConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{save_checkpoint, ModelConfig, Parameters};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

const INIT_STREAM: u64 = 0;
const ORDER_STREAM: u64 = 1;
const MASK_STREAM: u64 = 2;

/// Loss of one batch at the given parameters.
pub fn total_loss<T: Scalar>(
    batch: &[Vec<T>],
    params: &Parameters<T>,
    config: &ModelConfig,
    ssl: &SslConfig,
    seed: u64,
) -> Result<LossReport> {
    BatchObjective::new(batch.to_vec(), params, config, ssl, seed)?.evaluate(params)
}

/// Moment-based first-order optimizer (decays 0.9 / 0.999).
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &Parameters<T>, lr: f64) -> Self {
        let zeros: Vec<Matrix<T>> = params
            .tensors()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Adam {
            lr: T::lit(lr),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut Parameters<T>, grads: &[Matrix<T>]) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let it = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice());
            for (((p, &g), m), v) in it {
                *m = self.beta1 * *m + (one - self.beta1) * g;
                *v = self.beta2 * *v + (one - self.beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Default)]
pub struct TrainOptions<'a, T> {
    /// Where the last good parameters go if a step turns non-finite.
    pub failure_checkpoint: Option<PathBuf>,
    /// Start from these parameters instead of a seeded initialization.
    pub init: Option<Parameters<T>>,
    pub on_step: Option<&'a mut dyn FnMut(&LossReport)>,
}

pub struct TrainOutcome<T> {
    pub params: Parameters<T>,
    pub history: Vec<LossReport>,
}

pub fn train<T: Scalar>(
    segments: &[Vec<T>],
    config: &ModelConfig,
    ssl: &SslConfig,
) -> Result<TrainOutcome<T>> {
    train_with(segments, config, ssl, TrainOptions::default())
}

/// Runs `ssl.steps` optimizer steps over reshuffled mini-batches. Each
/// step's history entry is the loss at the parameters before its update.
pub fn train_with<T: Scalar>(
    segments: &[Vec<T>],
    config: &ModelConfig,
    ssl: &SslConfig,
    mut options: TrainOptions<'_, T>,
) -> Result<TrainOutcome<T>> {
    ssl.validate()?;
    config.validate()?;
    if segments.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 segments, got {}",
            segments.len()
        )));
    }
    let mut params = match options.init.take() {
        Some(p) => {
            p.check_schema(config)?;
            p
        }
        None => Parameters::init(config, derive_seed(ssl.seed, INIT_STREAM))?,
    };
    let b = ssl.batch_size.min(segments.len());
    let mut order: Vec<usize> = (0..segments.len()).collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(ssl.seed, ORDER_STREAM));
    let mut cursor = order.len();
    let mut adam = Adam::new(&params, ssl.learning_rate);
    let mut history = Vec::with_capacity(ssl.steps);

    for step in 0..ssl.steps {
        if cursor + b > order.len() {
            order.shuffle(&mut order_rng);
            cursor = 0;
        }
        let batch: Vec<Vec<T>> = order[cursor..cursor + b]
            .iter()
            .map(|&i| segments[i].clone())
            .collect();
        cursor += b;

        let mask_seed = derive_seed(derive_seed(ssl.seed, MASK_STREAM), step as u64);
        let outcome = BatchObjective::new(batch, &params, config, ssl, mask_seed)
            .and_then(|obj| obj.gradient(&params));
        let (mut report, grads) = match outcome {
            Ok(ok) if ok.1.iter().all(Matrix::is_finite) => ok,
            Ok(_) | Err(Error::NonFinite(_)) | Err(Error::NonFiniteLoss { .. }) => {
                return Err(abort(
                    step,
                    &params,
                    config,
                    options.failure_checkpoint.as_ref(),
                ));
            }
            Err(e) => return Err(e),
        };
        report.step = step;
        if let Some(cb) = options.on_step.as_mut() {
            cb(&report);
        }
        history.push(report);
        let last_good = params.clone();
        adam.step(&mut params, &grads);
        if !params.is_finite() {
            return Err(abort(
                step,
                &last_good,
                config,
                options.failure_checkpoint.as_ref(),
            ));
        }
    }
    Ok(TrainOutcome { params, history })
}

fn abort<T: Scalar>(
    step: usize,
    last_good: &Parameters<T>,
    config: &ModelConfig,
    path: Option<&PathBuf>,
) -> Error {
    let checkpoint = match path {
        Some(p) if last_good.is_finite() => match save_checkpoint(last_good, config, p) {
            Ok(()) => Some(p.clone()),
            Err(e) => return e,
        },
        _ => None,
    };
    Error::NonFiniteLoss { step, checkpoint }
}
