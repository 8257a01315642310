//! Small deterministic neural-network engine in double precision, with the
//! autoencoder and CNN solver builders used for QUBO experiments.

mod dd;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod layer;
pub mod loss;
pub mod network;
mod ops;
pub mod optim;
mod reference;
pub mod tensor;
pub mod zoo;

pub use error::{NnError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layer::{LayerSpec, Params};
pub use loss::Loss;
pub use network::{Mode, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::Tensor;
pub use zoo::{Arch, Hyperparams, Model};
