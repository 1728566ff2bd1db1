//! Stage functions shared by the command line and the end-to-end tests:
//! load segments, train a backbone, embed, derive vectors.

use std::collections::BTreeSet;
use std::path::Path;

use crate::data_io::{load_segments, CohortManifest, CohortSplit, Modality, Segment};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::model::{embed_segments, ModelConfig, Parameters};
use crate::phenotype::{fit_disease_vector, DiseaseVector};
use crate::scalar::Scalar;
use crate::ssl::{train_with, SslConfig, TrainOptions, TrainOutcome};

pub fn segment_samples<T: Scalar>(segments: &[Segment]) -> Vec<Vec<T>> {
    segments
        .iter()
        .map(|s| s.samples.iter().map(|&v| T::lit(f64::from(v))).collect())
        .collect()
}

/// Self-supervised training on the training split's segments of one
/// modality.
pub fn train_modality<T: Scalar>(
    data_dir: &Path,
    split: &CohortSplit,
    config: &ModelConfig,
    ssl: &SslConfig,
    options: TrainOptions<'_, T>,
) -> Result<TrainOutcome<T>> {
    let segments = load_segments(
        data_dir,
        split.train_ids.iter().map(String::as_str),
        config.modality,
    )?;
    if segments.is_empty() {
        return Err(Error::MissingInput(data_dir.join("signals")));
    }
    train_with(&segment_samples::<T>(&segments), config, ssl, options)
}

/// Embeds every manifest subject's segments of the model's modality.
pub fn embed_modality<T: Scalar>(
    data_dir: &Path,
    manifest: &CohortManifest,
    params: &Parameters<T>,
    config: &ModelConfig,
) -> Result<EmbeddingStore<T>> {
    let segments = load_segments(data_dir, manifest.subject_ids(), config.modality)?;
    let entries = embed_segments(&segments, params, config)?;
    EmbeddingStore::new(config.embed_dim, entries)
}

/// One disease vector per outcome for `modality`, from training subjects.
pub fn derive_vectors<T: Scalar>(
    store: &EmbeddingStore<T>,
    manifest: &CohortManifest,
    train_ids: &BTreeSet<String>,
    outcomes: &[String],
    modality: Modality,
) -> Result<Vec<DiseaseVector<T>>> {
    outcomes
        .iter()
        .map(|o| fit_disease_vector(store, manifest, train_ids, o, modality))
        .collect()
}
