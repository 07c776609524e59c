//! Minimal tensor and layer engine with explicit backpropagation.

mod adam;
pub mod layers;
mod loss;
mod network;
mod real;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub(crate) use adam::apply_adam;
pub use layers::{Conv2d, ConvGeometry, Dense, Flatten, MaxPool, ParamKind, Relu, Select};
pub use loss::{sgvb_objective, softmax_xent, KlTerm, SgvbLossParts};
pub use network::{argmax, Layer, LayerSpec, Network, NetworkSpec};
pub use real::Real;
pub use tensor::Tensor;
