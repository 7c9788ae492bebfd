pub mod convm;
pub mod network;
pub mod spec;

pub use convm::{receptive_field, ConvMConfig};
pub use network::{Architecture, DecoderSpec, Forward, ForwardOptions, HeadSpec, Model};
pub use spec::{FeatureShape, LayerKind, LayerSpec, NetworkSpec};
