//! Residual-prior, frequency-aware fusion of infrared and visible images.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. It contains the complete numerical stack: a small reverse-mode
//! autodiff engine over `f64` tensors, 2-D FFTs, the fusion network and its
//! auxiliary decoder, every training objective, the optimizer, and the
//! evaluation metrics. File formats, image IO and the command line live in
//! the companion `rpfnet` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod autograd;
pub mod error;
pub mod fft;
pub mod imaging;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod optim;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
