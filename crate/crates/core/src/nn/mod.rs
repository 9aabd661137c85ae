//! Layers with parameters held in a [`ParamStore`] under hierarchical names.

mod activation;
mod block;
mod conv;
mod linear;
mod norm;
mod params;

pub use activation::Activation;
pub use block::ResidualBlock;
pub use conv::{conv2d, Conv2d, Conv2dConfig};
pub use linear::{linear, Linear};
pub use norm::{batch_norm2d, layer_norm, BatchNorm2d, BatchStats, LayerNorm, Mode, Stats, BN_MOMENTUM, NORM_EPS};
pub use params::{BufferStore, Initializer, ParamStore};
