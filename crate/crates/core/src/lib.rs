pub mod audit;
pub mod checks;
pub mod da;
pub mod error;
pub mod fault;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod graph;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{DType, Scalar, Tensor};
