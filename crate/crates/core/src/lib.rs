//! Echo State Transformer, recurrent and attention baselines, and the STREAM
//! working-memory benchmark, on a small reverse-mode autodiff engine.

pub mod attention;
pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod est;
pub mod linalg;
pub mod model;
pub mod params;
pub mod reservoir;
pub mod stream;
pub mod training;

pub use error::{Error, Result};
