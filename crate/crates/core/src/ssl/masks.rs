use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::PatchGrid;
use crate::scalar::Scalar;

/// Binary patch mask: `true` = masked (1), `false` = visible (0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub bits: Vec<bool>,
}

impl MaskPlan {
    pub fn n_masked(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

pub fn masked_count(n: usize, mask_ratio: f64) -> usize {
    (mask_ratio * n as f64).round() as usize
}

/// `k` independent plans, each masking exactly `round(mask_ratio * n)`
/// distinct patches drawn uniformly without replacement.
pub fn sample_masks(n: usize, mask_ratio: f64, k: usize, seed: u64) -> Result<Vec<MaskPlan>> {
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mask ratio must lie in (0, 1), got {mask_ratio}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 patches, got {n}"
        )));
    }
    let masked = masked_count(n, mask_ratio);
    if masked == 0 || masked == n {
        return Err(Error::DegenerateMask {
            n,
            ratio: mask_ratio,
            masked,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k)
        .map(|_| {
            let mut bits = vec![false; n];
            for i in rand::seq::index::sample(&mut rng, n, masked) {
                bits[i] = true;
            }
            MaskPlan { bits }
        })
        .collect())
}

/// Replaces masked rows with the mask token; visible rows pass through.
pub fn apply_mask<T: Scalar>(
    patches: &PatchGrid<T>,
    plan: &MaskPlan,
    mask_token: &[T],
) -> Result<PatchGrid<T>> {
    let m = patches.matrix();
    if plan.len() != m.rows() {
        return Err(Error::Shape(format!(
            "mask of length {} for {} patches",
            plan.len(),
            m.rows()
        )));
    }
    if mask_token.len() != m.cols() {
        return Err(Error::Shape(format!(
            "mask token of width {} for {} columns",
            mask_token.len(),
            m.cols()
        )));
    }
    let out = Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        if plan.bits[i] {
            mask_token[j]
        } else {
            m[(i, j)]
        }
    });
    Ok(PatchGrid(out))
}
