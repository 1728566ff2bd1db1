//! Per-subject risk card: each outcome's current score against the mean of
//! disease-positive training subjects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use crate::data_io::{CohortManifest, Modality};
use crate::error::{Error, Result};
use crate::phenotype::ScoreTable;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskStatus {
    AboveAverage,
    AtOrBelowAverage,
}

impl RiskStatus {
    /// Strict comparison: equal scores are not above average.
    pub fn compare(current: f64, positive_mean: f64) -> Self {
        if current > positive_mean {
            RiskStatus::AboveAverage
        } else {
            RiskStatus::AtOrBelowAverage
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RiskStatus::AboveAverage => "Above average",
            RiskStatus::AtOrBelowAverage => "At/Below average",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "Above average" => Some(RiskStatus::AboveAverage),
            "At/Below average" => Some(RiskStatus::AtOrBelowAverage),
            _ => None,
        }
    }
}

impl fmt::Display for RiskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub outcome: String,
    pub current: f64,
    pub positive_mean: f64,
    /// Share of positive subjects scoring below the subject, ties counting
    /// half, in percent.
    pub percentile: f64,
    pub status: RiskStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportCard {
    pub subject_id: String,
    pub modality: Modality,
    pub rows: Vec<ReportRow>,
}

fn percentile_among(value: f64, sample: &[f64]) -> f64 {
    let below = sample.iter().filter(|&&s| s < value).count() as f64;
    let equal = sample.iter().filter(|&&s| s == value).count() as f64;
    100.0 * (below + 0.5 * equal) / sample.len() as f64
}

/// One row per outcome in `outcomes`. `current` holds the subject's scores
/// and `positive_scores` the scores of disease-positive reference subjects.
pub fn build_report_card(
    subject_id: &str,
    modality: Modality,
    current: &BTreeMap<String, f64>,
    positive_scores: &BTreeMap<String, Vec<f64>>,
    outcomes: &[String],
) -> Result<ReportCard> {
    let rows = outcomes
        .iter()
        .map(|o| {
            let &score = current.get(o).ok_or_else(|| {
                Error::InvalidArgument(format!("no {modality} score for {subject_id} / {o}"))
            })?;
            let positives = positive_scores
                .get(o)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::InsufficientClass(format!("{o}: no positive subjects")))?;
            let mean = positives.iter().sum::<f64>() / positives.len() as f64;
            Ok(ReportRow {
                outcome: o.clone(),
                current: score,
                positive_mean: mean,
                percentile: percentile_among(score, positives),
                status: RiskStatus::compare(score, mean),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReportCard {
        subject_id: subject_id.to_string(),
        modality,
        rows,
    })
}

/// Card for one subject from a score table, with positive means taken over
/// `reference_ids` (the training split).
pub fn report_from_scores<T: Scalar>(
    scores: &ScoreTable<T>,
    manifest: &CohortManifest,
    reference_ids: &BTreeSet<String>,
    subject_id: &str,
    modality: Modality,
    outcomes: &[String],
) -> Result<ReportCard> {
    if manifest.subject(subject_id).is_none() {
        return Err(Error::InvalidArgument(format!(
            "unknown subject {subject_id:?}"
        )));
    }
    let mut current = BTreeMap::new();
    let mut positives = BTreeMap::new();
    for o in outcomes {
        if manifest.outcome_index(o).is_none() {
            return Err(Error::UnknownOutcome(o.clone()));
        }
        let column = scores.column(o, modality);
        if let Some(s) = column.get(subject_id) {
            current.insert(o.clone(), s.as_f64());
        }
        let pos: Vec<f64> = column
            .iter()
            .filter(|(id, _)| reference_ids.contains(**id) && manifest.label(id, o) == Some(true))
            .map(|(_, s)| s.as_f64())
            .collect();
        positives.insert(o.clone(), pos);
    }
    build_report_card(subject_id, modality, &current, &positives, outcomes)
}

const HEADERS: [&str; 5] = [
    "Outcome",
    "Current",
    "Positive mean",
    "Percentile",
    "Status",
];

/// Fixed-width table: a title line, a header line, then one line per
/// outcome with 2-decimal numbers.
pub fn render_report_card(card: &ReportCard) -> String {
    let width = card
        .rows
        .iter()
        .map(|r| r.outcome.chars().count())
        .chain([HEADERS[0].len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Risk card: subject {} ({})",
        card.subject_id, card.modality
    );
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>13}  {:>10}  {}",
        HEADERS[0], HEADERS[1], HEADERS[2], HEADERS[3], HEADERS[4]
    );
    for r in &card.rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.2}  {:>13.2}  {:>10.2}  {}",
            r.outcome, r.current, r.positive_mean, r.percentile, r.status
        );
    }
    out
}

pub fn report_csv(card: &ReportCard) -> String {
    let mut out = String::from("outcome,current,positive_mean,percentile,status\n");
    for r in &card.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.outcome, r.current, r.positive_mean, r.percentile, r.status
        );
    }
    out
}

/// Reads back the body of a rendered card (numbers at printed precision).
pub fn parse_rendered(text: &str) -> Result<Vec<ReportRow>> {
    let bad = |l: &str| Error::Schema(format!("unparseable report line {l:?}"));
    text.lines()
        .skip(2)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cells: Vec<&str> = line
                .split("  ")
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .collect();
            let [outcome, current, mean, pct, status] = cells[..] else {
                return Err(bad(line));
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            Ok(ReportRow {
                outcome: outcome.to_string(),
                current: num(current)?,
                positive_mean: num(mean)?,
                percentile: num(pct)?,
                status: RiskStatus::parse(status).ok_or_else(|| bad(line))?,
            })
        })
        .collect()
}
