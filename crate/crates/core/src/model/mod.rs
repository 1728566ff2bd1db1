//! Residual-stem + transformer backbone: patchifier, position embeddings,
//! encoder, decoder and segment pooling.

mod checkpoint;
mod config;
mod network;
mod params;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_for, parse_checkpoint, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, DEFAULT_EMBED_DIM, DESK_EMBED_DIM};
pub use network::{
    decode, embed_segments, encode, patchify, pool_segment, Bound, Network, PatchGrid,
    SegmentEmbedding,
};
pub use params::{param_specs, Init, ParamSpec, Parameters};
