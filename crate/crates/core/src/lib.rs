//! Full-precision group LIF token mixing and the spiking-MLP backbone built
//! around it: tensors, handwritten forward/backward kernels, the model,
//! a desk-scale training harness, and gradient verification.

pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod kv;
pub mod layers;
pub mod lif;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Axis, DType, Real, Shape, Tensor4};
