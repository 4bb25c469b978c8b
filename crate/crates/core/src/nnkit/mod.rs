//! Minimal deterministic numeric kernel: dense and convolutional forward
//! passes recorded on a reverse-mode tape, stable logit loss, AdamW, and the
//! `DMLW` parameter container.

pub mod attention;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod store;
pub mod tape;
pub mod tensor;

pub use layers::{affine_forward, conv_pool_forward, ConvLayer, Ctx};
pub use loss::{bce_logits_loss, sigmoid};
pub use optim::{adamw_step, OptimHyper};
pub use store::ParamStore;
pub use tape::{Grads, Tape, Var};
pub use tensor::{RealMatrix, Tensor};
