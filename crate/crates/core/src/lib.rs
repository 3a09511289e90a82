//! Video matting core.
//!
//! Everything in this crate is pure computation over owned buffers: a small
//! reverse-mode autograd engine, the matting and trimap-propagation networks,
//! the training losses, evaluation metrics and the synthetic clip compositor.
//! It needs `alloc` but not `std`; file formats and the command line live in
//! the `vidmatte` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autograd;
pub mod compositor;
pub mod encoder;
pub mod error;
pub mod image;
pub mod kernels;
pub mod losses;
pub mod matting_net;
pub mod metrics;
pub mod morphology;
pub mod nn;
pub mod optim;
pub mod procedural;
pub mod rng;
pub mod scalar;
pub mod stfam;
pub mod tensor;
pub mod trainer;
pub mod trimap_prop;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor;
