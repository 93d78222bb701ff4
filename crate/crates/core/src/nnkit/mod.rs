//! Dense feed-forward networks: inference, training with early stopping,
//! fine-tuning and gradient checking.

mod network;
mod scaling;
mod train;

pub use network::{logistic, ActivationSpec, Dense, Network, NetworkDocument, OutputActivation, FORMAT_VERSION};
pub use scaling::{Standardizer, TargetScaler};
pub use train::{
    batch_gradient, fine_tune, gradient_check, train, train_from, weighted_loss, FineTuneConfig,
    GradientCheck, Gradients, Loss, NetworkConfig, Optimizer, TrainReport, WeightedData,
};
