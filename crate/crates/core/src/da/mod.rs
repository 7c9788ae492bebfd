//! Domain adaptation: Gaussian MMD, the joint objective and its training
//! protocol.

pub mod config;
pub mod data;
pub mod loss;
pub mod mmd;
pub mod train;

pub use config::{DAConfig, SolverConfig};
pub use data::{make_batch, sampling_ratio, Dataset, DomainBatch};
pub use loss::{da_loss, da_loss_with_bandwidths, LossComponents};
pub use train::{evaluate, prepare_da_model, train_da, train_supervised, History, MetricsRow, Trained};
