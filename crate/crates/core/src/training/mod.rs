//! Losses, dynamic weight averaging, optimizer, learning-rate schedule, and
//! the training and evaluation loops.

mod data;
mod dwa;
mod losses;
mod optim;
mod trainer;

pub use data::{split_indices, Dataset, Manifest, ManifestEntry, Sample};
pub use dwa::{dwa_weights, DwaState};
pub use losses::{ce_loss, norm_in_norm_loss, total_loss, EpsilonMode, LossConfig};
pub use optim::Adam;
pub use trainer::{cosine_lr, evaluate, train, EpochLog, Evaluation, TrainConfig, TrainOutcome};
