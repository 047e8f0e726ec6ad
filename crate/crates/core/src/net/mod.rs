//! Network assembly: encoder branches, decoder, classifier head, checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod params;
pub mod spec;

pub use checkpoint::Checkpoint;
pub use layers::Mode;
pub use model::{parameter_report, Network, NetworkOutput, ParameterReport};
pub use params::{ParamId, ParamKind, ParamStore};
pub use spec::{Architecture, BlockKind, BlockSpec, KernelSpec, NetworkVariant};
