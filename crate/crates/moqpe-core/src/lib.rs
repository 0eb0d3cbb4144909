//! Adapter-based fine-tuning of a miniature encoder-decoder vision-language
//! model: dynamically rank-truncated mixtures of quantized low-rank experts,
//! the joint image-text-matching + language-modeling objective, caption
//! metrics, similarity-driven sampling, and instruction-dataset tooling.

pub mod datagen;
pub mod error;
pub mod imageio;
pub mod metrics;
pub mod peft;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
