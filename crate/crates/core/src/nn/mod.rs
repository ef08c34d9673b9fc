//! Minimal network substrate: tensors, layers with hand-written backward
//! passes, the denoiser and encoder networks, Adam, and checkpoint records.

mod adam;
pub mod checkpoint;
mod denoiser;
mod encoder;
pub mod gradcheck;
pub mod layers;
mod params;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use denoiser::{timestep_embedding, Denoiser, DenoiserCache, DenoiserConfig};
pub use encoder::{Encoder, EncoderCache, EncoderConfig};
pub use layers::{ConvCache, FeatureMap, UpConvCache};
pub use params::{Grads, ParamId, ParamStore};
pub use scalar::{gemm_view, matmul, Mat, Scalar, View};
pub use tensor::Tensor;
