pub mod chain;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod lyapunov;
pub mod model;
pub mod pdmp;
pub mod qsd;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
