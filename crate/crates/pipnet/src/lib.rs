//! File formats, dataset IO, experiment harness and command-line tool for
//! the PIP-Net core.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod experiments;
pub mod pipt;
pub mod report;

pub use error::{Error, Result};
pub use pipnet_core as core;
