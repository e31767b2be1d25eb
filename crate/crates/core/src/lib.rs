//! Meta-learned initialization for NeRV-style implicit video
//! representations: a reverse-mode tensor engine, the multi-resolution
//! generator, fusion losses and metrics, first-order meta-training with
//! learned inner rates, and a pruning/quantization/entropy-coding pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
mod codec;
pub mod compress;
pub mod error;
pub mod fit;
pub mod loss;
pub mod meta;
pub mod model;
pub mod objective;
pub mod optim;
pub mod tensor;
pub mod video;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use loss::LossConfig;
pub use meta::{MetaConfig, MetaState};
pub use model::{ModelConfig, ModelParams};
pub use tensor::{Tape, Tensor, Var};
pub use video::Video;
