//! A small decoder-only transformer in `f64` with hand-written gradients,
//! AdamW, a warmup-plus-cosine schedule and binary checkpoints.

pub mod checkpoint;
pub mod config;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{AlphaMode, BlockKind, NetConfig, RangeChoice};
pub use mlp::{mlp_backward, mlp_forward, MlpBlock, MlpCache, MlpGrads};
pub use model::{Grads, Model, ParamGroup, ParamMut, ParamRef};
pub use optim::{adamw_step, clip_gradients, cosine_lr, AdamHyper, AdamState};
pub use tensor::Tensor;
pub use train::{evaluate, init_streams, train, TrainRecord};
