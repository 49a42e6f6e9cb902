//! Numerical core for FocusedDropout experiments.
//!
//! Everything here is `no_std` with `alloc`: dense NCHW tensors with a
//! reverse-mode tape, the FocusedDropout layer and its comparison
//! regularizers, small CNN architectures, dataset generation and
//! augmentation, the training protocol (participation-rate batch planning
//! with magnified weight decay) and the analysis passes (keep ratios, CAM,
//! reference-channel histograms).
//!
//! File formats, the CIFAR loader, experiment IO and the CLI live in the
//! `focusdrop` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod analysis;
pub mod autograd;
pub mod data;
pub mod error;
pub mod focus;
pub mod nn;
pub mod regularize;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use focus::{DropoutMode, FocusMask, GammaRange};
pub use scalar::Scalar;
pub use tensor::Tensor;
