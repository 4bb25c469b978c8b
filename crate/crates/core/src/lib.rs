//! Multimodal Android malware detection toolkit.
//!
//! Three static views of an application are turned into 128-d embeddings
//! and fused before a single logit classifier:
//!
//! * [`tabular`]: permission/intent bit-vectors, PCA, MLP encoder (TF).
//! * [`deximg`]: DEX section layout rendered as an RGB image, CNN encoder (IF).
//! * [`callgraph`] + [`seqenc`]: key-API call-graph reduction, DFS
//!   linearization and a small transformer encoder (GSF).
//!
//! [`fusion`] holds the five fusion strategies and the training loop,
//! [`robustness`] the obfuscation simulators and the black-box adversarial
//! generator, and [`harness`] the synthetic corpus, metrics and experiment
//! runner. Everything numeric sits on the small reverse-mode kernel in
//! [`nnkit`].

pub mod callgraph;
pub mod deximg;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod nnkit;
pub mod robustness;
pub mod sample;
pub mod seqenc;
pub mod tabular;

pub use error::{Error, Result};
pub use sample::{ApkSample, Label};
