pub mod baselines;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod operators;
pub mod pipeline;
pub mod relax;
pub mod synthetic;

pub use error::{Error, Result};
