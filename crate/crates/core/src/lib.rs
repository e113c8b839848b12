//! Task-specific distillation between a teacher and a student vision
//! transformer, with low-rank adapters shared across the two encoders.

pub mod cka;
pub mod data;
pub mod error;
pub mod experiment;
pub mod head;
pub mod lora;
pub mod losses;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::Tensor;
