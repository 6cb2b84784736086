//! PIP-Net core: pedestrian crossing-intention prediction from kinematic and
//! contextual cues, built on a small reverse-mode autodiff engine.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the dataset
//! layout on disk and the command-line tool live in the `pipnet` crate.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod autodiff;
pub mod check;
pub mod error;
pub mod eval;
pub mod features;
pub mod metrics;
pub mod model;
pub mod multicam;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
