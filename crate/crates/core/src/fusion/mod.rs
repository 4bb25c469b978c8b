//! Intermediate fusion of the three modality embeddings, the logit head and
//! the joint training loop.

mod bundle;
mod model;
mod strategy;

pub use bundle::{
    dwf_weighted_sum, dwf_weights, fuse_bundle, fuse_concat, fuse_cross_attn, fuse_dwf, fuse_gated, fuse_self_attn,
    multi_head_attention, ModalityBundle,
};
pub use model::{
    read_manifest, train, write_manifest, Architecture, Detector, EpochLog, ImageBatch, ModelInputs, TrainLog,
    TrainedModel,
};
pub use strategy::{classify, predict, FusionHead, Modality, Strategy, DEFAULT_HEADS, MODALITY_DIM};
