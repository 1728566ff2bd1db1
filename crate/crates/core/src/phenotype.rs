//! Disease directions in embedding space and the subject scores they induce.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data_io::{CohortManifest, Modality};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm};
use crate::model::SegmentEmbedding;
use crate::scalar::Scalar;

/// Below this separation the two centroids are treated as coincident.
pub const MIN_CENTROID_GAP: f64 = 1e-10;

/// Segments averaged into a subject score.
pub const TOP_SEGMENTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Centroids<T> {
    pub positive: Vec<T>,
    pub negative: Vec<T>,
    /// Subjects contributing to each class.
    pub n_positive: usize,
    pub n_negative: usize,
}

/// Segment-weighted class means. Subjects whose label is `None` are
/// skipped. Summation runs in (subject, segment) order so the result does
/// not depend on input order.
pub fn compute_centroids<T: Scalar>(
    embeddings: &[SegmentEmbedding<T>],
    label: impl Fn(&str) -> Option<bool>,
) -> Result<Centroids<T>> {
    let mut sorted: Vec<&SegmentEmbedding<T>> = embeddings.iter().collect();
    sorted.sort_by(|a, b| {
        (a.subject_id.as_str(), a.segment_index).cmp(&(b.subject_id.as_str(), b.segment_index))
    });
    let dim = sorted.first().map_or(0, |e| e.vector.len());
    let mut sums = [vec![T::zero(); dim], vec![T::zero(); dim]];
    let mut segments = [0usize; 2];
    let mut subjects: [BTreeSet<&str>; 2] = Default::default();
    for e in sorted {
        if e.vector.len() != dim {
            return Err(Error::Shape(format!(
                "embedding of {} has {} components, expected {dim}",
                e.subject_id,
                e.vector.len()
            )));
        }
        let Some(y) = label(&e.subject_id) else {
            continue;
        };
        let class = usize::from(!y);
        for (s, &v) in sums[class].iter_mut().zip(&e.vector) {
            *s += v;
        }
        segments[class] += 1;
        subjects[class].insert(&e.subject_id);
    }
    for (class, name) in [(0, "positive"), (1, "negative")] {
        if segments[class] == 0 {
            return Err(Error::InsufficientClass(format!(
                "no {name} subject has embeddings"
            )));
        }
    }
    let [pos, neg] = sums;
    let mean = |v: Vec<T>, n: usize| v.into_iter().map(|s| s / T::of_usize(n)).collect();
    Ok(Centroids {
        positive: mean(pos, segments[0]),
        negative: mean(neg, segments[1]),
        n_positive: subjects[0].len(),
        n_negative: subjects[1].len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiseaseVector<T> {
    pub outcome: String,
    pub modality: Modality,
    /// Unit-norm direction from the negative to the positive centroid.
    pub vector: Vec<T>,
    pub mu_positive: Vec<T>,
    pub mu_negative: Vec<T>,
    pub n_positive: usize,
    pub n_negative: usize,
}

pub fn derive_disease_vector<T: Scalar>(
    centroids: &Centroids<T>,
    outcome: &str,
    modality: Modality,
) -> Result<DiseaseVector<T>> {
    if centroids.positive.len() != centroids.negative.len() {
        return Err(Error::Shape("centroids differ in dimension".into()));
    }
    let diff: Vec<T> = centroids
        .positive
        .iter()
        .zip(&centroids.negative)
        .map(|(&p, &n)| p - n)
        .collect();
    let norm = l2_norm(&diff);
    if !(norm.as_f64() >= MIN_CENTROID_GAP) {
        return Err(Error::DegenerateDirection {
            norm: norm.as_f64(),
        });
    }
    Ok(DiseaseVector {
        outcome: outcome.to_string(),
        modality,
        vector: diff.into_iter().map(|v| v / norm).collect(),
        mu_positive: centroids.positive.clone(),
        mu_negative: centroids.negative.clone(),
        n_positive: centroids.n_positive,
        n_negative: centroids.n_negative,
    })
}

/// Disease vector for `outcome` from the training subjects' embeddings of
/// `modality`.
pub fn fit_disease_vector<T: Scalar>(
    store: &EmbeddingStore<T>,
    manifest: &CohortManifest,
    train_ids: &BTreeSet<String>,
    outcome: &str,
    modality: Modality,
) -> Result<DiseaseVector<T>> {
    if manifest.outcome_index(outcome).is_none() {
        return Err(Error::UnknownOutcome(outcome.to_string()));
    }
    let selected: Vec<SegmentEmbedding<T>> = store
        .entries()
        .iter()
        .filter(|e| e.modality == modality && train_ids.contains(&e.subject_id))
        .cloned()
        .collect();
    let centroids =
        compute_centroids(&selected, |id| manifest.label(id, outcome)).map_err(|e| match e {
            Error::InsufficientClass(m) => {
                Error::InsufficientClass(format!("{outcome}/{modality}: {m}"))
            }
            other => other,
        })?;
    derive_disease_vector(&centroids, outcome, modality)
}

/// Dot product with the unit disease direction.
pub fn project_segment<T: Scalar>(embedding: &[T], v: &DiseaseVector<T>) -> Result<T> {
    if embedding.len() != v.vector.len() {
        return Err(Error::Shape(format!(
            "embedding has {} components, disease vector {}",
            embedding.len(),
            v.vector.len()
        )));
    }
    Ok(dot(embedding, &v.vector))
}

/// Mean of the largest `min(3, len)` scores, and how many were used.
pub fn subject_score<T: Scalar>(segment_scores: &[T]) -> Result<(T, usize)> {
    if segment_scores.is_empty() {
        return Err(Error::InvalidArgument(
            "no segment scores to aggregate".into(),
        ));
    }
    if let Some(bad) = segment_scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("segment score {bad}")));
    }
    let mut sorted = segment_scores.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let k = sorted.len().min(TOP_SEGMENTS);
    Ok((accurate_mean(&sorted[..k]), k))
}

/// Mean with a compensated sum and a fused remainder correction, so short
/// decimal inputs like (0.9, 0.8, 0.7) average to the nearest double of
/// their exact mean.
fn accurate_mean<T: Scalar>(xs: &[T]) -> T {
    let (mut s, mut c) = (T::zero(), T::zero());
    for &x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() {
            (s - t) + x
        } else {
            (x - t) + s
        };
        s = t;
    }
    let n = T::of_usize(xs.len());
    let q = s / n;
    let r = (-q).mul_add(n, s);
    q + (r + c) / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectScore<T> {
    pub subject_id: String,
    pub outcome: String,
    pub modality: Modality,
    /// `None` when the subject has no embeddings for this modality.
    pub score: Option<T>,
    pub n_segments_used: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable<T> {
    pub rows: Vec<SubjectScore<T>>,
}

pub const SCORE_COLUMNS: [&str; 5] = [
    "subject_id",
    "outcome",
    "modality",
    "score",
    "n_segments_used",
];

/// Scores every manifest subject against every disease vector. Rows are
/// ordered by subject, then by the order of `vectors`.
pub fn score_cohort<T: Scalar>(
    store: &EmbeddingStore<T>,
    vectors: &[DiseaseVector<T>],
    manifest: &CohortManifest,
) -> Result<ScoreTable<T>> {
    for v in vectors {
        if manifest.outcome_index(&v.outcome).is_none() {
            return Err(Error::UnknownOutcome(v.outcome.clone()));
        }
    }
    let mut groups = BTreeMap::new();
    for m in Modality::ALL {
        groups.insert(m, store.by_subject(m));
    }
    let ids: Vec<&str> = manifest.subject_ids().collect();
    let per_subject = ids
        .par_iter()
        .map(|&id| {
            vectors
                .iter()
                .map(|v| {
                    let segs = groups[&v.modality].get(id);
                    let (score, used) = match segs {
                        Some(segs) if !segs.is_empty() => {
                            let proj = segs
                                .iter()
                                .map(|e| project_segment(&e.vector, v))
                                .collect::<Result<Vec<T>>>()?;
                            let (s, k) = subject_score(&proj)?;
                            (Some(s), k)
                        }
                        _ => (None, 0),
                    };
                    Ok(SubjectScore {
                        subject_id: id.to_string(),
                        outcome: v.outcome.clone(),
                        modality: v.modality,
                        score,
                        n_segments_used: used,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable {
        rows: per_subject.into_iter().flatten().collect(),
    })
}

impl<T: Scalar> ScoreTable<T> {
    pub fn get(
        &self,
        subject: &str,
        outcome: &str,
        modality: Modality,
    ) -> Option<&SubjectScore<T>> {
        self.rows
            .iter()
            .find(|r| r.subject_id == subject && r.outcome == outcome && r.modality == modality)
    }

    /// `(subject, score)` pairs for one (outcome, modality) cell, skipping
    /// missing scores.
    pub fn column(&self, outcome: &str, modality: Modality) -> BTreeMap<&str, T> {
        self.rows
            .iter()
            .filter(|r| r.outcome == outcome && r.modality == modality)
            .filter_map(|r| r.score.map(|s| (r.subject_id.as_str(), s)))
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = SCORE_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let score = r
                .score
                .map_or_else(|| "NA".to_string(), |s| format!("{:?}", s.as_f64()));
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.subject_id, r.outcome, r.modality, score, r.n_segments_used
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != SCORE_COLUMNS {
            return Err(Error::Manifest {
                row: 0,
                column: "header".into(),
                message: format!("expected {}", SCORE_COLUMNS.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let bad = |column: &str, message: String| Error::Manifest {
                row,
                column: column.into(),
                message,
            };
            let modality: Modality = rec[2]
                .parse()
                .map_err(|e: Error| bad("modality", e.to_string()))?;
            let score = match &rec[3] {
                "NA" => None,
                s => Some(T::lit(
                    s.parse::<f64>().map_err(|e| bad("score", e.to_string()))?,
                )),
            };
            let n_segments_used = rec[4]
                .parse()
                .map_err(|e: std::num::ParseIntError| bad("n_segments_used", e.to_string()))?;
            rows.push(SubjectScore {
                subject_id: rec[0].to_string(),
                outcome: rec[1].to_string(),
                modality,
                score,
                n_segments_used,
            });
        }
        Ok(ScoreTable { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }
}

impl<T: Scalar> DiseaseVector<T> {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "outcome {}", self.outcome);
        let _ = writeln!(out, "modality {}", self.modality);
        let _ = writeln!(out, "d {}", self.vector.len());
        let _ = writeln!(out, "n_positive {}", self.n_positive);
        let _ = writeln!(out, "n_negative {}", self.n_negative);
        for (name, values) in [
            ("vector", &self.vector),
            ("mu_positive", &self.mu_positive),
            ("mu_negative", &self.mu_negative),
        ] {
            out.push_str(name);
            out.push('\n');
            for v in values {
                let _ = writeln!(out, "{:?}", v.as_f64());
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Schema(format!("disease vector file: {m}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(bad(format!("expected {key}, found {line:?}"))),
            }
        };
        let outcome = header("outcome")?;
        let modality: Modality = header("modality")?.parse()?;
        let int = |s: String, key: &str| s.parse::<usize>().map_err(|e| bad(format!("{key}: {e}")));
        let d = int(header("d")?, "d")?;
        let n_positive = int(header("n_positive")?, "n_positive")?;
        let n_negative = int(header("n_negative")?, "n_negative")?;
        let mut block = |name: &str| -> Result<Vec<T>> {
            match lines.next() {
                Some(l) if l == name => {}
                other => return Err(bad(format!("expected {name}, found {other:?}"))),
            }
            (0..d)
                .map(|_| {
                    let l = lines
                        .next()
                        .ok_or_else(|| bad(format!("{name} truncated")))?;
                    let v: f64 = l.parse().map_err(|e| bad(format!("{name}: {e}")))?;
                    Ok(T::lit(v))
                })
                .collect()
        };
        let vector = block("vector")?;
        let mu_positive = block("mu_positive")?;
        let mu_negative = block("mu_negative")?;
        if let Some(extra) = lines.next() {
            return Err(bad(format!("unexpected trailing line {extra:?}")));
        }
        Ok(DiseaseVector {
            outcome,
            modality,
            vector,
            mu_positive,
            mu_negative,
            n_positive,
            n_negative,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
