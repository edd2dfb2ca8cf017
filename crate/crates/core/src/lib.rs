//! Stochastic-gradient Langevin samplers and tools to measure the bias that
//! mini-batching introduces in their invariant measure.
//!
//! Samplers: SGLD, mini-batched underdamped Langevin, Adaptive Langevin
//! (AdL, a Nosé–Hoover friction variable that absorbs constant gradient
//! noise) and extended AdL (eAdL, a friction field `ξ(θ) = Σ_k ξ_k f_k(θ)`
//! that absorbs θ-dependent noise).

pub mod basis;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod minibatch;
pub mod models;
pub mod rng;
pub mod samplers;
