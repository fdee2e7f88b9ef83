//! Free energies of finite-rank tensor inference models and their
//! Hamilton-Jacobi limit on the cone of positive-semidefinite matrices.

pub mod error;
pub mod free_energy;
pub mod hj_checker;
pub mod hopf;
pub mod initial_condition;
pub mod lemmas;
pub mod model;
pub mod stats;
pub mod symcone;

pub use error::{Error, Result};
pub use symcone::{Matrix, SymMatrix};
