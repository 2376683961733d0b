//! Recurrent sequence models and the S2M / SM2SM / S2SM training graphs.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod optim;
pub mod scheme;
pub mod train;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{rollout_loss, LossError, PairedWindow};
pub use network::{GruNetwork, GruShape, LinearModel, SequenceModel};
pub use scheme::Scheme;
pub use train::{train, ModelConfig, TrainConfig, TrainError, TrainedModel};
