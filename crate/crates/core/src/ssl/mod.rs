//! Masked-view self-supervised training: masks, the similarity and
//! coding-rate terms, and the optimization loop.

mod loss;
mod masks;
mod objective;
mod train;

pub use loss::{similarity_loss, tcr_loss, tcr_loss_and_grad, tcr_scale};
pub use masks::{apply_mask, masked_count, sample_masks, MaskPlan};
pub use objective::BatchObjective;
pub use train::{total_loss, train, train_with, Adam, TrainOptions, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 24;
pub const DESK_PERMUTATIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub mask_ratio: f64,
    /// Mask permutations (views) per segment.
    pub n_permutations: usize,
    pub tcr_epsilon: f64,
    pub tcr_weight: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// Compare only masked rows in the similarity term (ablation).
    pub masked_only: bool,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            mask_ratio: 0.5,
            n_permutations: DEFAULT_PERMUTATIONS,
            tcr_epsilon: 0.2,
            tcr_weight: 1.0,
            batch_size: 32,
            learning_rate: 1e-4,
            steps: 1000,
            seed: 0,
            masked_only: false,
        }
    }
}

impl SslConfig {
    pub fn desk() -> Self {
        SslConfig {
            n_permutations: DESK_PERMUTATIONS,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!(
                "mask_ratio must lie in (0, 1), got {}",
                self.mask_ratio
            ));
        }
        if self.n_permutations == 0 {
            return bad("n_permutations must be at least 1".into());
        }
        if !(self.tcr_epsilon > 0.0) || !self.tcr_epsilon.is_finite() {
            return bad(format!(
                "tcr_epsilon must be positive, got {}",
                self.tcr_epsilon
            ));
        }
        if !(self.tcr_weight >= 0.0) || !self.tcr_weight.is_finite() {
            return bad(format!(
                "tcr_weight must be nonnegative, got {}",
                self.tcr_weight
            ));
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub similarity_term: f64,
    pub tcr_term: f64,
    pub total: f64,
}

impl LossReport {
    /// `total = (1 - similarity) - weight * tcr`.
    pub fn compose(similarity: f64, tcr: f64, weight: f64, step: usize) -> Result<Self> {
        let total = (1.0 - similarity) - weight * tcr;
        if !(similarity.is_finite() && tcr.is_finite() && total.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                checkpoint: None,
            });
        }
        Ok(LossReport {
            step,
            similarity_term: similarity,
            tcr_term: tcr,
            total,
        })
    }

    /// One training-log line: `step,similarity,tcr,total,wallclock_ms`.
    pub fn log_line(&self, wallclock_ms: u128) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{}",
            self.step, self.similarity_term, self.tcr_term, self.total, wallclock_ms
        )
    }
}

pub const TRAIN_LOG_HEADER: &str = "step,similarity,tcr,total,wallclock_ms";
