//! Rectified-flow generation with a toy multi-modal diffusion transformer, and
//! inference-time semantic editing of its joint-attention outputs.
//!
//! The crate is `no_std` (it needs `alloc`): it holds every numeric piece and no IO.
//! File formats and the command-line driver live in the `fluxspace` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub mod editor;
pub mod flow;
pub mod mmdit;
pub mod numcore;
pub mod synth;
pub mod textenc;
pub mod trainer;

pub use numcore::{Real, Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    Shape { op: &'static str, expected: Vec<usize>, found: Vec<usize> },
    NonScalarLoss { shape: Vec<usize> },
    NonFinite { what: &'static str, step: usize },
    InvalidConfig(String),
    EmptyMask,
    MissingParameter(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, expected, found } => {
                write!(f, "{op}: shape mismatch, expected {expected:?}, found {found:?}")
            }
            Error::NonScalarLoss { shape } => {
                write!(f, "backward needs a scalar loss, got shape {shape:?}")
            }
            Error::NonFinite { what, step } => write!(f, "non-finite {what} at step {step}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::EmptyMask => f.write_str("object mask is empty"),
            Error::MissingParameter(name) => write!(f, "missing parameter tensor `{name}`"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T, E = Error> = core::result::Result<T, E>;
