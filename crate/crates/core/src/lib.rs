//! Orthogonal convolution regularization through doubly-block-Toeplitz
//! lowering, with the augmentation and episodic few-shot training machinery
//! needed to exercise it.

pub mod augment;
pub mod capacity;
pub mod dbt;
pub mod episodes;
pub mod error;
pub mod fft;
pub mod learner;
pub mod ortho;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{ConvGeometry, Tensor4};
