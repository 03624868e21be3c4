//! Numerical core of a common-POD co-kriging emulator for parametric
//! spatio-temporal flow ensembles.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! and thread-level parallelism live in the `flowemu` companion crate.

#![no_std]

extern crate alloc;

pub mod cokrige;
pub mod coupling;
pub mod cpod;
pub mod eigen;
pub mod ensemble;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod glasso;
pub mod idw;
pub mod lbfgs;
pub mod linalg;
pub mod predictor;
pub mod special;
pub mod spectrum;
pub mod synth;
pub mod tke;
pub mod wncq;

pub use error::{Error, Result};
