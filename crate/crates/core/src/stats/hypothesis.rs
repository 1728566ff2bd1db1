use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 1-based ranks with ties sharing their mean rank.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean((i+1)..=j)
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// ROC AUC as the Mann-Whitney probability that a positive outscores a
/// negative, ties counting one half.
pub fn auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let values: Vec<f64> = scores.iter().map(|s| s.as_f64()).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("AUC scores".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InsufficientClass(format!(
            "AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let ranks = mid_ranks(&values);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y)
        .map(|(r, _)| r)
        .sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
}

fn chi_square_tail(statistic: f64, dof: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .sf(statistic)
}

/// Tie-corrected Kruskal-Wallis H with its chi-square(k-1) tail.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "Kruskal-Wallis needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("empty group".into()));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Kruskal-Wallis sample".into()));
    }
    let dof = groups.len() - 1;
    let n = pooled.len() as f64;
    let ranks = mid_ranks(&pooled);

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    for run in sorted.chunk_by(|a, b| a == b) {
        let t = run.len() as f64;
        ties += t * t * t - t;
    }
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            dof,
        });
    }

    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction;
    let h = h.max(0.0);
    Ok(TestResult {
        statistic: h,
        p_value: chi_square_tail(h, dof),
        dof,
    })
}

/// Pearson chi-square test of independence on an r x c count table;
/// `yates` applies the continuity correction (2 x 2 tables only).
pub fn chi_square(table: &[Vec<u64>], yates: bool) -> Result<TestResult> {
    let r = table.len();
    let c = table.first().map_or(0, Vec::len);
    if r < 2 || c < 2 || table.iter().any(|row| row.len() != c) {
        return Err(Error::Shape(
            "contingency table must be rectangular and at least 2 x 2".into(),
        ));
    }
    if yates && (r, c) != (2, 2) {
        return Err(Error::InvalidArgument(
            "continuity correction applies to 2 x 2 tables".into(),
        ));
    }
    let row_sums: Vec<f64> = table
        .iter()
        .map(|row| row.iter().sum::<u64>() as f64)
        .collect();
    let col_sums: Vec<f64> = (0..c)
        .map(|j| table.iter().map(|row| row[j]).sum::<u64>() as f64)
        .collect();
    if row_sums.iter().chain(&col_sums).any(|&s| s == 0.0) {
        return Err(Error::InvalidArgument(
            "contingency table has a zero margin".into(),
        ));
    }
    let total: f64 = row_sums.iter().sum();
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = row_sums[i] * col_sums[j] / total;
            let mut d = (o as f64 - e).abs();
            if yates {
                d = (d - 0.5).max(0.0);
            }
            stat += d * d / e;
        }
    }
    let dof = (r - 1) * (c - 1);
    Ok(TestResult {
        statistic: stat,
        p_value: chi_square_tail(stat, dof),
        dof,
    })
}
