//! File formats, checkpoints and the command-line front end for
//! [`vidmatte_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod motion;
pub mod pngio;
pub mod report;

pub use error::{Error, Result};
