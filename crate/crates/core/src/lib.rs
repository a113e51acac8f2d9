//! 2.5D classification of 3D volumes: every axial, coronal and sagittal
//! slice is encoded by a shared 2D network and the slice features are merged
//! by multihead attention pooling, which yields a per-slice importance map.
//!
//! The crate carries its own small autograd engine, the volumetric baselines
//! (3D and ACS convolution), alternative reduction heads, NAdam training,
//! synthetic planted-signal data and interpretability exports.

pub mod architecture;
pub mod autograd;
pub mod data;
pub mod interpret;
pub mod layers;
pub mod params;
pub mod tensor;
pub mod training;

pub use tensor::{Element, Tensor, TensorError};
