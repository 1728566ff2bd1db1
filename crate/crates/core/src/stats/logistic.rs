use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};

/// Two-sided 95% normal quantile used for Wald intervals.
pub const WALD_Z: f64 = 1.959964;

/// Significance threshold for reported p-values.
pub const SIGNIFICANCE: f64 = 0.05;

/// Coefficient magnitude beyond which fitted probabilities saturate and the
/// fit is flagged as separated.
const SEPARATION_BETA: f64 = 30.0;

/// Smallest pivot of the unit-diagonal Gram matrix tolerated before the
/// design counts as collinear.
const COLLINEAR_PIVOT: f64 = 1e-10;

pub const INTERCEPT: &str = "intercept";

/// Complete-case design: one row per subject, one column per named
/// predictor. The intercept is added by the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    subjects: Vec<String>,
    values: Matrix<f64>,
    n_dropped: usize,
}

impl FeatureMatrix {
    pub fn new(
        names: Vec<String>,
        subjects: Vec<String>,
        rows: Vec<Vec<f64>>,
        n_dropped: usize,
    ) -> Result<Self> {
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) || n == INTERCEPT {
                return Err(Error::InvalidArgument(format!(
                    "duplicate or reserved column {n:?}"
                )));
            }
        }
        if subjects.len() != rows.len() {
            return Err(Error::Shape(format!(
                "{} subject ids for {} rows",
                subjects.len(),
                rows.len()
            )));
        }
        let p = names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::Shape(format!(
                "row of width {} for {p} columns",
                r.len()
            )));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        let values = Matrix::from_vec(rows.len(), p, rows.into_iter().flatten().collect())?;
        Ok(FeatureMatrix {
            names,
            subjects,
            values,
            n_dropped,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn values(&self) -> &Matrix<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_dropped(&self) -> usize {
        self.n_dropped
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// Columns shifted and scaled by the given per-column mean and SD.
    pub fn standardized(&self, means: &[f64], sds: &[f64]) -> Self {
        let values = Matrix::from_fn(self.values.rows(), self.values.cols(), |i, j| {
            (self.values[(i, j)] - means[j]) / sds[j]
        });
        FeatureMatrix {
            values,
            ..self.clone()
        }
    }

    /// Per-column mean and sample SD (zero-variance columns get SD 1).
    pub fn column_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.values.rows() as f64;
        let p = self.values.cols();
        let mut means = vec![0.0; p];
        let mut sds = vec![1.0; p];
        for j in 0..p {
            let col: Vec<f64> = (0..self.values.rows())
                .map(|i| self.values[(i, j)])
                .collect();
            means[j] = col.iter().sum::<f64>() / n;
            if n > 1.0 {
                let var = col.iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / (n - 1.0);
                if var > 0.0 {
                    sds[j] = var.sqrt();
                }
            }
        }
        (means, sds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub outcome: String,
    /// `intercept` followed by the design's columns.
    pub feature_names: Vec<String>,
    pub beta: Vec<f64>,
    /// Inverse of the observed information at `beta`; NaN when singular.
    pub cov: Matrix<f64>,
    pub n_used: usize,
    pub n_dropped: usize,
    pub converged: bool,
    /// Perfect or quasi-complete separation: coefficients diverged.
    pub separated: bool,
    pub iterations: usize,
    pub deviance: f64,
}

impl LogisticModel {
    pub fn linear_predictor(&self, features: &[f64]) -> f64 {
        self.beta[0]
            + self.beta[1..]
                .iter()
                .zip(features)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(features))
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.beta.len())
            .map(|j| self.cov[(j, j)].sqrt())
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn with_intercept(x: &FeatureMatrix) -> Matrix<f64> {
    let (n, p) = x.values.shape();
    Matrix::from_fn(
        n,
        p + 1,
        |i, j| if j == 0 { 1.0 } else { x.values[(i, j - 1)] },
    )
}

fn deviance(design: &Matrix<f64>, y: &[bool], beta: &[f64]) -> f64 {
    (0..design.rows())
        .map(|i| {
            let eta: f64 = design.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            2.0 * if y[i] { softplus(-eta) } else { softplus(eta) }
        })
        .sum()
}

/// `Xᵀ W X` and `Xᵀ (y - p)` at `beta`.
fn information(design: &Matrix<f64>, y: &[bool], beta: &[f64]) -> (Matrix<f64>, Vec<f64>) {
    let k = design.cols();
    let mut h = Matrix::zeros(k, k);
    let mut g = vec![0.0; k];
    for i in 0..design.rows() {
        let row = design.row(i);
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let p = sigmoid(eta);
        let w = p * (1.0 - p);
        let r = f64::from(u8::from(y[i])) - p;
        for a in 0..k {
            g[a] += row[a] * r;
            for b in 0..=a {
                h[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
    (h, g)
}

fn check_rank(design: &Matrix<f64>) -> Result<()> {
    let gram = design.matmul_tn(design);
    let k = gram.cols();
    let scale: Vec<f64> = (0..k).map(|j| gram[(j, j)].sqrt()).collect();
    if scale.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Collinear);
    }
    let unit = Matrix::from_fn(k, k, |a, b| gram[(a, b)] / (scale[a] * scale[b]));
    let ch = Cholesky::new(&unit).map_err(|_| Error::Collinear)?;
    let f = ch.factor();
    if (0..k).any(|j| f[(j, j)] * f[(j, j)] < COLLINEAR_PIVOT) {
        return Err(Error::Collinear);
    }
    Ok(())
}

/// Binomial maximum likelihood by iteratively reweighted least squares with
/// step-halving. A separated design returns a flagged, non-converged model.
pub fn fit_logistic(
    x: &FeatureMatrix,
    y: &[bool],
    outcome: &str,
    options: FitOptions,
) -> Result<LogisticModel> {
    if y.len() != x.n_rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            y.len(),
            x.n_rows()
        )));
    }
    let n_pos = y.iter().filter(|&&v| v).count();
    if n_pos == 0 || n_pos == y.len() {
        return Err(Error::InsufficientClass(format!(
            "{outcome}: {n_pos} positive of {} rows",
            y.len()
        )));
    }
    let design = with_intercept(x);
    check_rank(&design)?;

    let k = design.cols();
    let mut beta = vec![0.0; k];
    let mut dev = deviance(&design, y, &beta);
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let (h, g) = information(&design, y, &beta);
        let Ok(ch) = Cholesky::new(&h) else {
            separated = true;
            break;
        };
        let delta = ch.solve_vec(&g);
        let mut t = 1.0;
        let (next, next_dev) = loop {
            let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + t * d).collect();
            let cd = deviance(&design, y, &cand);
            if cd <= dev * (1.0 + 1e-12) + 1e-300 || t < 1e-10 {
                break (cand, cd);
            }
            t *= 0.5;
        };
        let step = delta.iter().map(|d| (t * d).abs()).fold(0.0, f64::max);
        let size = beta.iter().map(|b| b.abs()).fold(0.0, f64::max);
        beta = next;
        dev = next_dev;
        if beta.iter().any(|b| b.abs() > SEPARATION_BETA) {
            separated = true;
            break;
        }
        if step <= options.tol * (1.0 + size) {
            converged = true;
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{outcome}: logistic coefficients"
        )));
    }
    let (h, _) = information(&design, y, &beta);
    let cov = match Cholesky::new(&h) {
        Ok(ch) => ch.inverse(),
        Err(_) => Matrix::from_fn(k, k, |_, _| f64::NAN),
    };
    let mut feature_names = vec![INTERCEPT.to_string()];
    feature_names.extend(x.names.iter().cloned());
    Ok(LogisticModel {
        outcome: outcome.to_string(),
        feature_names,
        beta,
        cov,
        n_used: x.n_rows(),
        n_dropped: x.n_dropped,
        converged: converged && !separated,
        separated,
        iterations,
        deviance: dev,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OddsRatio {
    pub feature: String,
    pub odds_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

impl OddsRatio {
    pub fn significant(&self) -> bool {
        self.p_value < SIGNIFICANCE
    }
}

/// Wald odds ratio, 95% interval and two-sided p for one coefficient.
pub fn wald_odds_ratio(feature: &str, beta: f64, se: f64) -> OddsRatio {
    let z = beta / se;
    let p_value = if se == 0.0 {
        if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        2.0 * normal.sf(z.abs())
    };
    OddsRatio {
        feature: feature.to_string(),
        odds_ratio: beta.exp(),
        ci_low: (beta - WALD_Z * se).exp(),
        ci_high: (beta + WALD_Z * se).exp(),
        p_value,
    }
}

/// Odds ratios for every non-intercept feature not listed in
/// `adjusted_for` (those are covariates held fixed).
pub fn odds_ratios(model: &LogisticModel, adjusted_for: &[&str]) -> Result<Vec<OddsRatio>> {
    if !model.converged {
        return Err(Error::NotConverged);
    }
    let se = model.std_errors();
    Ok(model
        .feature_names
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, name)| !adjusted_for.contains(&name.as_str()))
        .map(|(j, name)| wald_odds_ratio(name, model.beta[j], se[j]))
        .collect())
}
