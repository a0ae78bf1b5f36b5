//! Uncertainty-aware attention on a RETAIN-style two-level attention network.
//!
//! The crate covers the full pipeline: a small reverse-mode autodiff engine
//! ([`grad`]), the network and its attention variants ([`net`]), variational
//! training with MC dropout ([`train`]), Monte-Carlo inference with
//! "I don't know" deferral ([`infer`]), calibration and discrimination metrics
//! ([`calib`]), synthetic and CSV data ([`data`]) and the command-line driver
//! ([`cli`]).

pub mod calib;
pub mod cli;
pub mod data;
mod error;
pub mod grad;
pub mod infer;
pub mod net;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
