//! QUBO problems, their TSP encoding, classical solvers used as labeling
//! oracles, reproducible datasets, and the accuracy metrics used to score
//! neural solvers.

pub mod data;
pub mod error;
pub mod metrics;
pub mod qubo;
pub mod rng;
pub mod solve;
pub mod tsp;

pub use error::{CoreError, Result};
pub use qubo::{canonicalize, denormalize, random_qubo, BitVector, QuboMatrix, ValueRange};
pub use solve::{
    anneal_qubo, brute_force_qubo, brute_force_tsp, label, AnnealParams, Method, SolveResult,
};
pub use tsp::{
    bits_to_tour, tour_to_bits, tsp_to_qubo, PenaltyConfig, Tour, TourDecode, TspInstance,
};
