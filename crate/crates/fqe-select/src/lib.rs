//! Hyperparameter selection for fitted Q-evaluation on tabular MDPs.
//!
//! The crate provides:
//! - exact tabular MDP machinery (Bellman backups, occupancy profiles,
//!   ground-truth Q-functions) in [`mdp`];
//! - transition dataset sampling, splitting and feature embeddings in
//!   [`data`];
//! - approximate Bellman operator candidates (exact, corrupted, and
//!   regression-fitted) in [`ops`];
//! - normalized kernels, dual RKHS norm oracles and the kernel Bellman loss
//!   in [`kernel`];
//! - the iterative evaluation drivers and the four selection rules (regret
//!   minimization and kernel-loss minimization, each in finite-horizon and
//!   fixed-point form) in [`select`];
//! - benchmark orchestration, result emission and rate checks in [`bench`].

pub mod bench;
pub mod data;
pub mod error;
pub mod kernel;
pub mod mdp;
pub mod ops;
pub mod select;

pub use error::{FqeError, Result};
