//! Dense tensors, reverse-mode differentiation and discrete Fourier
//! transforms, sized for training small neural operators on a CPU.

pub mod complex;
pub mod error;
pub mod fft;
mod gradcheck;
mod nn;
pub mod ops;
pub mod scalar;
pub mod simd;
pub mod spectral;
pub mod tape;
pub mod tensor;

pub use complex::ComplexTensor;
pub use error::{DiffError, Result};
pub use gradcheck::{grad_check, Coordinates};
pub use ops::{Activation, Segments};
pub use scalar::Scalar;
pub use spectral::ModeSet;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
