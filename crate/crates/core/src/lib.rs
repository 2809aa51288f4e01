//! Low-bit mixed-precision weight-activation quantization reference, plus a
//! roofline serving simulator.
//!
//! The numeric kernels are generic over [`scalar::Scalar`]; the concrete
//! aliases below pin the f32 reference types used by the model pipeline and
//! the CLI. Stored tensors are always fp32 or packed integers.

pub mod error;
pub mod gptq;
pub mod kvcache;
pub mod model;
pub mod perfsim;
pub mod qgemm;
pub mod quantizer;
pub mod reorder;
pub mod scalar;
pub mod tensors;
pub mod util;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// f32 reference instantiations.
pub type MatrixF32 = tensors::Matrix<f32>;
pub type MatrixF64 = tensors::Matrix<f64>;
pub type QuantParamsF32 = quantizer::QuantParams<f32>;
pub type QuantizedTensorF32 = quantizer::QuantizedTensor<f32>;
pub type MixedQuantActivationF32 = qgemm::MixedQuantActivation<f32>;
pub type MixedQuantWeightF32 = qgemm::MixedQuantWeight<f32>;
pub type QuantizedLinearLayerF32 = qgemm::QuantizedLinearLayer<f32>;
pub type QuantizedKvCacheF32 = kvcache::QuantizedKvCache<f32>;
