//! Minimal neural substrate: matrices, a reverse-mode tape, the layers the
//! encoder needs, AdamW, checkpoints and gradient checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod matrix;
pub mod optim;
mod param;
pub mod tape;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{dropout, log_softmax_masked, softmax_cross_entropy, Affine, LayerNorm, SelfAttention};
pub use matrix::{gemm, Matrix};
pub use optim::{adamw_step, adamw_step_with_lr, AdamWConfig, LinearSchedule};
pub use param::{uniform, xavier_uniform, Gradients, ParamGroup, ParamId, ParamSet};
pub use tape::{masked_cross_entropy, Backward, Tape, Var};
