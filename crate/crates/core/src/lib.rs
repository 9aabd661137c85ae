//! Head pose regression with a CNN backbone and a transformer encoder,
//! built on a small reverse-mode autodiff engine.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{HeadPose, HeadPosr, ModelConfig};
pub use tensor::{no_grad, Element, Tensor};
