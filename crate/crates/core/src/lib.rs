//! Numerical core of a structure-prompted, haze-aware dehazing pipeline.
//!
//! The crate provides every mechanism as a pure, seed-deterministic value
//! transformation: image tensors and file I/O, atmospheric-scattering haze
//! synthesis, Haar structural prompts, dark-channel haze masks with sparse
//! attention modulation, a toy conditional diffusion restorer with a
//! self-correcting refiner decode stage, and full-reference image metrics.
//!
//! Every type is an immutable value after construction and every operation
//! is a pure function, so all APIs are safe to call concurrently.

pub mod attention;
pub mod checkpoint;
pub mod dcp;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod prompt;
pub mod refiner;
pub mod seed;
pub mod synthesis;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::ImageTensor;
