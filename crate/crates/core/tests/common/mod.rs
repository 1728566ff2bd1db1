#![allow(dead_code)]

use nalgebra::DMatrix;
use psgrisk::data_io::Modality;
use psgrisk::linalg::Matrix;
use psgrisk::model::{ModelConfig, Parameters};
use psgrisk::scalar::Precision;
use psgrisk::ssl::{BatchObjective, SslConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Denominator floor for relative gradient error. Attention key biases have
/// an identically zero gradient (softmax ignores a per-row shift), so their
/// finite differences are pure roundoff.
pub const GRAD_FLOOR: f64 = 1e-5;

/// m=40 samples, n=4 patches, d=8, one decoder layer under a two-layer
/// encoder, f64.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        modality: Modality::Ecg,
        input_len: 40,
        n_patches: 4,
        embed_dim: 8,
        encoder_depth: 2,
        decoder_depth: 1,
        n_heads: 2,
        ffn_mult: 2,
        stem_strides: vec![2, 5],
        precision: Precision::F64,
    }
}

pub fn tiny_ssl() -> SslConfig {
    SslConfig {
        n_permutations: 2,
        batch_size: 3,
        ..SslConfig::default()
    }
}

pub fn random_batch(seed: u64, b: usize, m: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..b)
        .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Per-tensor relative error between the analytic gradient and central
/// differences with step `h`.
pub fn gradient_errors(
    obj: &BatchObjective<'_, f64>,
    params: &Parameters<f64>,
    h: f64,
) -> Vec<(String, f64)> {
    let (_, grads) = obj.gradient(params).unwrap();
    params
        .names()
        .iter()
        .enumerate()
        .map(|(t, name)| {
            let mut fd = Matrix::zeros(grads[t].rows(), grads[t].cols());
            for k in 0..fd.as_slice().len() {
                let mut p = params.clone();
                p.tensors_mut()[t].as_mut_slice()[k] += h;
                let up = obj.evaluate(&p).unwrap().total;
                p.tensors_mut()[t].as_mut_slice()[k] -= 2.0 * h;
                let down = obj.evaluate(&p).unwrap().total;
                fd.as_mut_slice()[k] = (up - down) / (2.0 * h);
            }
            let diff = grads[t].sub(&fd).frobenius_norm();
            let scale = grads[t]
                .frobenius_norm()
                .max(fd.frobenius_norm())
                .max(GRAD_FLOOR);
            (name.clone(), diff / scale)
        })
        .collect()
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal matrix from the QR of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> Matrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    Matrix::from_fn(n, n, |i, j| q[(i, j)] * r[(j, j)].signum())
}

pub fn to_nalgebra(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// `½ Σ log(1 + c λᵢ)` over the eigenvalues of `Z Zᵀ`, `c = d / (b ε²)`.
pub fn coding_rate_by_eigen(z: &Matrix<f64>, epsilon: f64) -> f64 {
    let (d, b) = z.shape();
    let c = d as f64 / (b as f64 * epsilon * epsilon);
    let zn = to_nalgebra(z);
    let gram = &zn * zn.transpose();
    let eig = gram.symmetric_eigen();
    0.5 * eig
        .eigenvalues
        .iter()
        .map(|&l| (c * l.max(0.0)).ln_1p())
        .sum::<f64>()
}

/// Count of positive/negative pairs ordered correctly, ties counting half.
pub fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Logistic MLE by plain gradient ascent with step `1/L`, where `L` bounds
/// the Hessian through the trace of the design Gram matrix. It shares
/// nothing with the Newton solver under test. Returns the intercept followed
/// by the slopes.
pub fn logistic_by_gradient_ascent(rows: &[Vec<f64>], y: &[bool]) -> Vec<f64> {
    let p = rows.first().map_or(0, Vec::len) + 1;
    let trace: f64 = rows
        .iter()
        .map(|x| 1.0 + x.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let step = 4.0 / trace;
    let mut beta = vec![0.0; p];
    for _ in 0..1_000_000 {
        let mut grad = vec![0.0; p];
        for (x, &yi) in rows.iter().zip(y) {
            let eta = beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            let r = f64::from(u8::from(yi)) - 1.0 / (1.0 + (-eta).exp());
            grad[0] += r;
            for (g, xj) in grad[1..].iter_mut().zip(x) {
                *g += r * xj;
            }
        }
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-10 {
            break;
        }
        for (b, g) in beta.iter_mut().zip(&grad) {
            *b += step * g;
        }
    }
    beta
}
