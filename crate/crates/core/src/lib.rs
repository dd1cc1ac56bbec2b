pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod surrogate;
pub mod synth;
pub mod tensor;
pub mod velocity;

pub use error::{Error, Result};
pub use sampler::{ConditionImage, CorrectorConfig, CorrectorKind, TimeGrid};
pub use tensor::Tensor;
pub use velocity::{PromptId, VelocityField};
