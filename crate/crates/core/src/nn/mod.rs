//! A small CPU tensor engine and the 1D residual network.

mod checkpoint;
mod gradcheck;
mod layers;
mod network;
mod optim;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use gradcheck::{check_network, gradient_check, relative_error, GradCheckReport, TensorCheck};
pub use layers::{conv1d, conv1d_backward, mse_loss};
pub use network::{Cache, Mode, ResNet, ResNetConfig};
pub use optim::{Adam, AdamConfig};
pub use tensor::{Scalar, Tensor};
pub use train::{evaluate_loss, train, write_history, HistoryRow, TrainConfig, TrainData, TrainOutcome};
