pub mod ablation;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
