pub mod checkpoint;
pub mod tdf;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use tdf::{TdfData, TdfTensor};
