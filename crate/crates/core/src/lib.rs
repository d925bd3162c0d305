//! Graph convolution simulator probe for measuring how much graph
//! knowledge an enhanced embedding has absorbed.

pub mod baseline;
pub mod checkpoint;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod graph;
pub mod interpret;
pub mod linalg;
pub mod mi;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
