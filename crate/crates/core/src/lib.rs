//! Numerics for structured-sparse linear maps.
//!
//! The crate is `no_std` with `alloc`; the `std` feature (on by default) only
//! switches on runtime CPU feature detection inside the matrix kernels. IO,
//! file formats and the experiment CLI live in the companion `blockmix` crate.
//!
//! Module map:
//!
//! * [`dense`]: matrices, permutations, singular values, matrix exponential.
//! * [`rng`]: the seeded, stream-splittable generator every experiment uses.
//! * [`spectral`]: effective rank, utilization, commutator and Trotter numerics.
//! * [`info`]: entropy, mutual information, NMI and the factorization loss.
//! * [`topology`]: block partitions, shuffle schedules, regret.
//! * [`nets`]: dense and block-diagonal layers, embeddings, Jacobian analysis.
//! * [`training`]: losses, Adam, the training loop and update bookkeeping.
//! * [`synthgen`]: deterministic synthetic tasks.
//! * [`corpus`]: note events, tokenization, chunking and texture metrics.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod corpus;
pub mod dense;
mod error;
pub mod info;
pub(crate) mod math;
pub mod nets;
pub mod rng;
pub mod spectral;
pub mod synthgen;
pub mod topology;
pub mod training;

pub use dense::{Matrix, PermutationVec};
pub use error::{Error, Result};
pub use rng::SeededRng;
