//! Reverse-mode autodiff and the neural building blocks used by the models.

pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod norm;
pub mod params;
pub mod scalar;
pub mod scan;
pub mod spectral;

pub use graph::{concat, Gradients, Graph, Var};
pub use layers::{
    BatchNorm, Conv1d, Conv2d, ConvTranspose1d, ConvTranspose2d, DepthwiseConv1d, LayerKind, LayerNorm, LayerSpec,
    Linear, MambaBlock, MambaConfig, Padding,
};
pub use params::{fan_in_uniform, uniform, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
