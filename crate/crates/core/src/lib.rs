//! Exact-simulation laboratory for the real-valued pseudorandom unitary
//! `U_pi U_g H^n U_f`: state-vector kernels, seeded and keyed samplers, the
//! flattening analysis, outer-permutation combinatorics, the analytic target
//! operators, an exact Haar twirl, and a verification harness that checks
//! each bound against brute force.

pub mod error;
pub mod flatness;
pub mod haartwirl;
pub mod oracles;
mod par;
pub mod permcomb;
pub mod qcore;
pub mod report;
pub mod sampling;
pub mod stats;
pub mod targets;
pub mod verify;

pub use error::{Error, Result};
pub use qcore::{DensityOperator, StateVector, C64};
