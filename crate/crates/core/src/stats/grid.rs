use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::hypothesis::auc;
use super::logistic::{fit_logistic, odds_ratios, FeatureMatrix, FitOptions, OddsRatio};
use crate::data_io::{CohortManifest, CohortSplit, Modality, SubjectRecord};
use crate::error::{Error, Result};
use crate::phenotype::ScoreTable;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predictor {
    Age,
    Sex,
    Bmi,
    Frs,
    Score(Modality),
}

impl Predictor {
    pub fn column_name(self) -> String {
        match self {
            Predictor::Age => "age".into(),
            Predictor::Sex => "sex".into(),
            Predictor::Bmi => "bmi".into(),
            Predictor::Frs => "frs".into(),
            Predictor::Score(m) => format!("score_{m}"),
        }
    }
}

pub const DEMOGRAPHICS: [Predictor; 3] = [Predictor::Age, Predictor::Sex, Predictor::Bmi];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictorSet {
    pub name: String,
    pub predictors: Vec<Predictor>,
}

impl PredictorSet {
    fn new(name: &str, predictors: &[Predictor]) -> Self {
        PredictorSet {
            name: name.to_string(),
            predictors: predictors.to_vec(),
        }
    }

    /// The eleven standard rows: single modalities, their combinations,
    /// demographics, the Framingham score and the two composites.
    pub fn standard() -> Vec<PredictorSet> {
        use Modality::*;
        use Predictor::*;
        let (eeg, ecg, resp) = (Score(Eeg), Score(Ecg), Score(Resp));
        vec![
            Self::new("EEG", &[eeg]),
            Self::new("ECG", &[ecg]),
            Self::new("Resp", &[resp]),
            Self::new("EEG-ECG", &[eeg, ecg]),
            Self::new("EEG-Resp", &[eeg, resp]),
            Self::new("ECG-Resp", &[ecg, resp]),
            Self::new("EEG-ECG-Resp", &[eeg, ecg, resp]),
            Self::new("Baseline", &DEMOGRAPHICS),
            Self::new("FRS Score", &[Frs]),
            Self::new("FRS Score Composite", &[eeg, ecg, resp, Frs]),
            Self::new("Composite", &[eeg, ecg, resp, Age, Sex, Bmi]),
        ]
    }

    pub fn by_name(name: &str) -> Option<PredictorSet> {
        Self::standard()
            .into_iter()
            .find(|s| s.name.eq_ignore_ascii_case(name))
    }
}

/// Complete-case design for one outcome over `subjects`; subjects missing
/// the label or any predictor are dropped and counted.
pub fn assemble_features<T: Scalar>(
    manifest: &CohortManifest,
    scores: &ScoreTable<T>,
    outcome: &str,
    predictors: &[Predictor],
    subjects: &BTreeSet<String>,
) -> Result<(FeatureMatrix, Vec<bool>)> {
    if manifest.outcome_index(outcome).is_none() {
        return Err(Error::UnknownOutcome(outcome.to_string()));
    }
    let columns: BTreeMap<Modality, BTreeMap<&str, T>> = Modality::ALL
        .iter()
        .map(|&m| (m, scores.column(outcome, m)))
        .collect();
    let value = |rec: &SubjectRecord, p: Predictor| -> Option<f64> {
        match p {
            Predictor::Age => rec.age,
            Predictor::Sex => rec.sex.map(f64::from),
            Predictor::Bmi => rec.bmi,
            Predictor::Frs => rec.frs,
            Predictor::Score(m) => columns[&m].get(rec.subject_id.as_str()).map(|s| s.as_f64()),
        }
    };
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0;
    for id in subjects {
        let Some(rec) = manifest.subject(id) else {
            dropped += 1;
            continue;
        };
        let label = manifest.label(id, outcome);
        let row: Option<Vec<f64>> = predictors.iter().map(|&p| value(rec, p)).collect();
        match (label, row) {
            (Some(y), Some(row)) => {
                ids.push(id.clone());
                rows.push(row);
                labels.push(y);
            }
            _ => dropped += 1,
        }
    }
    let names = predictors.iter().map(|p| p.column_name()).collect();
    Ok((FeatureMatrix::new(names, ids, rows, dropped)?, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingReason {
    SingleClassTrain,
    SingleClassTest,
    Collinear,
    Numeric,
}

impl MissingReason {
    pub fn code(self) -> &'static str {
        match self {
            MissingReason::SingleClassTrain => "single_class_train",
            MissingReason::SingleClassTest => "single_class_test",
            MissingReason::Collinear => "collinear",
            MissingReason::Numeric => "numeric",
        }
    }

    fn from_code(s: &str) -> Option<Self> {
        [
            MissingReason::SingleClassTrain,
            MissingReason::SingleClassTest,
            MissingReason::Collinear,
            MissingReason::Numeric,
        ]
        .into_iter()
        .find(|r| r.code() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridCell {
    Auc(f64),
    Missing(MissingReason),
}

impl GridCell {
    pub fn auc(self) -> Option<f64> {
        match self {
            GridCell::Auc(v) => Some(v),
            GridCell::Missing(_) => None,
        }
    }
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridCell::Auc(v) => write!(f, "{v:.3}"),
            GridCell::Missing(r) => write!(f, "NA:{}", r.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucGrid {
    pub predictor_sets: Vec<String>,
    pub outcomes: Vec<String>,
    /// `cells[row][column]`, rows following `predictor_sets`.
    pub cells: Vec<Vec<GridCell>>,
}

impl AucGrid {
    pub fn get(&self, predictor_set: &str, outcome: &str) -> Option<GridCell> {
        let r = self
            .predictor_sets
            .iter()
            .position(|s| s == predictor_set)?;
        let c = self.outcomes.iter().position(|o| o == outcome)?;
        Some(self.cells[r][c])
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("predictor_set");
        for o in &self.outcomes {
            out.push(',');
            out.push_str(o);
        }
        out.push('\n');
        for (name, row) in self.predictor_sets.iter().zip(&self.cells) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        if header.get(0) != Some("predictor_set") {
            return Err(Error::Manifest {
                row: 0,
                column: "predictor_set".into(),
                message: "grid header must start with predictor_set".into(),
            });
        }
        let outcomes: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut predictor_sets = Vec::new();
        let mut cells = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            predictor_sets.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .zip(&outcomes)
                .map(|(cell, outcome)| {
                    let bad = || Error::Manifest {
                        row: i + 1,
                        column: outcome.clone(),
                        message: format!("bad cell {cell:?}"),
                    };
                    match cell.strip_prefix("NA:") {
                        Some(code) => MissingReason::from_code(code)
                            .map(GridCell::Missing)
                            .ok_or_else(bad),
                        None => cell.parse().map(GridCell::Auc).map_err(|_| bad()),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(row);
        }
        Ok(AucGrid {
            predictor_sets,
            outcomes,
            cells,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GridOptions {
    /// Z-score predictors with training-split moments before fitting.
    pub standardize: bool,
    pub fit: FitOptions,
}

fn evaluate_cell<T: Scalar>(
    scores: &ScoreTable<T>,
    manifest: &CohortManifest,
    split: &CohortSplit,
    set: &PredictorSet,
    outcome: &str,
    options: GridOptions,
) -> Result<GridCell> {
    let (mut train_x, train_y) =
        assemble_features(manifest, scores, outcome, &set.predictors, &split.train_ids)?;
    let (mut test_x, test_y) =
        assemble_features(manifest, scores, outcome, &set.predictors, &split.test_ids)?;
    let single = |y: &[bool]| y.iter().all(|&v| v) || y.iter().all(|&v| !v);
    if single(&train_y) {
        return Ok(GridCell::Missing(MissingReason::SingleClassTrain));
    }
    if single(&test_y) {
        return Ok(GridCell::Missing(MissingReason::SingleClassTest));
    }
    if options.standardize {
        let (means, sds) = train_x.column_moments();
        train_x = train_x.standardized(&means, &sds);
        test_x = test_x.standardized(&means, &sds);
    }
    let model = match fit_logistic(&train_x, &train_y, outcome, options.fit) {
        Ok(m) => m,
        Err(Error::Collinear) => return Ok(GridCell::Missing(MissingReason::Collinear)),
        Err(Error::NonFinite(_)) => return Ok(GridCell::Missing(MissingReason::Numeric)),
        Err(e) => return Err(e),
    };
    let predicted: Vec<f64> = (0..test_x.n_rows())
        .map(|i| model.linear_predictor(test_x.row(i)))
        .collect();
    match auc(&predicted, &test_y) {
        Ok(a) => Ok(GridCell::Auc(a)),
        Err(Error::NonFinite(_)) => Ok(GridCell::Missing(MissingReason::Numeric)),
        Err(e) => Err(e),
    }
}

/// Fits one logistic model per (predictor set, outcome) on the training
/// split and scores its AUC on the test split.
pub fn evaluate_grid<T: Scalar>(
    scores: &ScoreTable<T>,
    manifest: &CohortManifest,
    split: &CohortSplit,
    predictor_sets: &[PredictorSet],
    outcomes: &[String],
    options: GridOptions,
) -> Result<AucGrid> {
    for o in outcomes {
        if manifest.outcome_index(o).is_none() {
            return Err(Error::UnknownOutcome(o.clone()));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..predictor_sets.len())
        .flat_map(|r| (0..outcomes.len()).map(move |c| (r, c)))
        .collect();
    let flat = jobs
        .par_iter()
        .map(|&(r, c)| {
            evaluate_cell(
                scores,
                manifest,
                split,
                &predictor_sets[r],
                &outcomes[c],
                options,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let cells = flat
        .chunks(outcomes.len().max(1))
        .map(<[GridCell]>::to_vec)
        .take(predictor_sets.len())
        .collect();
    Ok(AucGrid {
        predictor_sets: predictor_sets.iter().map(|s| s.name.clone()).collect(),
        outcomes: outcomes.to_vec(),
        cells: if outcomes.is_empty() {
            vec![Vec::new(); predictor_sets.len()]
        } else {
            cells
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OddsRatioRow {
    pub outcome: String,
    pub modality: Modality,
    pub result: std::result::Result<OddsRatio, MissingReason>,
}

pub const OR_COLUMNS: [&str; 7] = [
    "outcome",
    "modality",
    "OR",
    "ci_low",
    "ci_high",
    "p",
    "significant",
];

/// Adjusted odds ratio of each modality's score for each outcome, from a
/// model with the score plus age, sex and BMI, fitted on `subjects`.
pub fn odds_ratio_report<T: Scalar>(
    scores: &ScoreTable<T>,
    manifest: &CohortManifest,
    subjects: &BTreeSet<String>,
    outcomes: &[String],
    modalities: &[Modality],
    options: GridOptions,
) -> Result<Vec<OddsRatioRow>> {
    let mut rows = Vec::new();
    for outcome in outcomes {
        for &m in modalities {
            let mut predictors = vec![Predictor::Score(m)];
            predictors.extend(DEMOGRAPHICS);
            let (mut x, y) = assemble_features(manifest, scores, outcome, &predictors, subjects)?;
            let result = if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
                Err(MissingReason::SingleClassTrain)
            } else {
                if options.standardize {
                    let (means, sds) = x.column_moments();
                    x = x.standardized(&means, &sds);
                }
                match fit_logistic(&x, &y, outcome, options.fit) {
                    Ok(model) => match odds_ratios(&model, &["age", "sex", "bmi"]) {
                        Ok(mut ors) => Ok(ors.remove(0)),
                        Err(_) => Err(MissingReason::Numeric),
                    },
                    Err(Error::Collinear) => Err(MissingReason::Collinear),
                    Err(Error::NonFinite(_)) => Err(MissingReason::Numeric),
                    Err(e) => return Err(e),
                }
            };
            rows.push(OddsRatioRow {
                outcome: outcome.clone(),
                modality: m,
                result,
            });
        }
    }
    Ok(rows)
}

pub fn odds_ratio_csv(rows: &[OddsRatioRow]) -> String {
    let mut out = OR_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        match &r.result {
            Ok(or) => {
                let _ = writeln!(
                    out,
                    "{},{},{:.4},{:.4},{:.4},{:.4e},{}",
                    r.outcome,
                    r.modality,
                    or.odds_ratio,
                    or.ci_low,
                    or.ci_high,
                    or.p_value,
                    or.significant()
                );
            }
            Err(reason) => {
                let na = format!("NA:{}", reason.code());
                let _ = writeln!(
                    out,
                    "{},{},{na},{na},{na},{na},false",
                    r.outcome, r.modality
                );
            }
        }
    }
    out
}
