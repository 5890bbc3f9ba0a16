//! The segmentation network: three-block convolutional encoder, two shallow
//! attention fusions, prediction head, loss and SGD training.

mod checkpoint;
mod loss;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use loss::{loss_on_tape, LossWeights};
pub use network::{sam, Attention, Network, NetworkConfig, Param};
pub use train::{train, train_step, Sgd, TrainError, TrainSettings};
