//! Dataset generation, training loops, evaluation and solving behind the
//! `qubo` command-line tool.

pub mod app;
pub mod error;
pub mod evaluate;
pub mod inputs;
pub mod solve;
pub mod train;

pub use error::{CliError, Result};
