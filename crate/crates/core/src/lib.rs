pub mod aggregate;
pub mod error;
pub mod folds;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod seed;
pub mod tensor;
pub mod trainer;
pub mod wsi;

pub use error::{Error, Result};
