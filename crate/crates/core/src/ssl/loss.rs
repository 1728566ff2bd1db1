use crate::autodiff::cosine_rows_mean;
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::model::PatchGrid;
use crate::scalar::Scalar;

/// Mean over the K decoded views of the mean row-wise cosine similarity to
/// the full-signal embedding `e_hat`. Lies in [-1, 1].
pub fn similarity_loss<T: Scalar>(e_hat: &PatchGrid<T>, z_list: &[PatchGrid<T>]) -> Result<T> {
    if z_list.is_empty() {
        return Err(Error::InvalidArgument("empty list of decoded views".into()));
    }
    let mut acc = T::zero();
    for z in z_list {
        if z.matrix().shape() != e_hat.matrix().shape() {
            return Err(Error::Shape(format!(
                "decoded view {:?} vs target {:?}",
                z.matrix().shape(),
                e_hat.matrix().shape()
            )));
        }
        acc += cosine_rows_mean(z.matrix(), e_hat.matrix());
    }
    Ok(acc / T::of_usize(z_list.len()))
}

/// `d / (b ε²)` for a d x b embedding matrix.
pub fn tcr_scale<T: Scalar>(d: usize, b: usize, epsilon: T) -> T {
    T::of_usize(d) / (T::of_usize(b) * epsilon * epsilon)
}

fn check_tcr_args<T: Scalar>(z: &Matrix<T>, epsilon: T) -> Result<()> {
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if z.cols() == 0 || z.rows() == 0 {
        return Err(Error::InvalidArgument("empty embedding matrix".into()));
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("coding-rate input".into()));
    }
    Ok(())
}

/// Gram matrix on the smaller side: `I_d + c Z Zᵀ` or `I_b + c Zᵀ Z`.
/// Both share the same determinant.
fn gram<T: Scalar>(z: &Matrix<T>, c: T) -> (Matrix<T>, bool) {
    let wide = z.rows() <= z.cols();
    let mut g = if wide { z.matmul_nt(z) } else { z.matmul_tn(z) }.scaled(c);
    for i in 0..g.rows() {
        g[(i, i)] += T::one();
    }
    (g, wide)
}

/// Total coding rate `½ log det(I + d/(bε²) Z Zᵀ)` of a d x b matrix whose
/// columns are embeddings, via Cholesky.
pub fn tcr_loss<T: Scalar>(z: &Matrix<T>, epsilon: T) -> Result<T> {
    check_tcr_args(z, epsilon)?;
    let c = tcr_scale(z.rows(), z.cols(), epsilon);
    let (g, _) = gram(z, c);
    let ch = Cholesky::new(&g)?;
    Ok(ch.log_det() * T::lit(0.5))
}

/// Coding rate and its gradient `c (I + c Z Zᵀ)⁻¹ Z`.
pub fn tcr_loss_and_grad<T: Scalar>(z: &Matrix<T>, epsilon: T) -> Result<(T, Matrix<T>)> {
    check_tcr_args(z, epsilon)?;
    let c = tcr_scale(z.rows(), z.cols(), epsilon);
    let (g, wide) = gram(z, c);
    let ch = Cholesky::new(&g)?;
    let value = ch.log_det() * T::lit(0.5);
    let grad = if wide {
        ch.solve(z).scaled(c)
    } else {
        // (I + cZZᵀ)⁻¹Z = Z(I + cZᵀZ)⁻¹
        ch.solve(&z.transpose()).transpose().scaled(c)
    };
    Ok((value, grad))
}
