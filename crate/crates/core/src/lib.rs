//! Self-supervised multimodal polysomnography embeddings, disease vectors
//! and the risk statistics built on them.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below name the common instantiations.

pub mod autodiff;
pub mod cli;
pub mod data_io;
pub mod embeddings;
pub mod error;
pub mod linalg;
pub mod model;
pub mod phenotype;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod ssl;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

pub type Matrix32 = linalg::Matrix<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Parameters32 = model::Parameters<f32>;
pub type Parameters64 = model::Parameters<f64>;
pub type EmbeddingStore32 = embeddings::EmbeddingStore<f32>;
pub type EmbeddingStore64 = embeddings::EmbeddingStore<f64>;
pub type DiseaseVector32 = phenotype::DiseaseVector<f32>;
pub type DiseaseVector64 = phenotype::DiseaseVector<f64>;
pub type ScoreTable32 = phenotype::ScoreTable<f32>;
pub type ScoreTable64 = phenotype::ScoreTable<f64>;
