//! Dual-branch speaker embedder: thin residual trunks for FBank and MODGD
//! input, channel co-attention between them, self-attentive pooling, the
//! embedding fusion head and the training losses.

mod branch;
mod coattention;
mod config;
mod fusion;
mod layers;
mod loss;
mod network;
mod sap;
mod train;

pub use branch::{BranchKind, BranchModel};
pub use coattention::{CoAttention, CoAttentionOut};
pub use config::{BranchConfig, FusionMode, LossKind, ModelConfig};
pub use fusion::FusionHead;
pub use layers::{AttentionProbe, BatchNorm2d, Conv2d, Ctx, Linear, Mode};
pub use loss::{aam_logits, aam_softmax_loss, cross_entropy_loss, ClassifierHead, ACOS_EPS};
pub use network::{features_to_input, BranchInputs, FusionModel};
pub use sap::SapLayer;
pub use train::{predict, sample_batch, train, train_step, Batch, Sgd, StepReport, TrainItem};
