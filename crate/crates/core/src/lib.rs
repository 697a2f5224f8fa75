//! Simulation and verification toolkit for central limit theorems of
//! time-dependent one-dimensional dynamical systems.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod quadrature;
pub mod sampling;
pub mod stats;
pub mod stein;
pub mod sunklodas;
pub mod transfer;

pub use error::{Error, Result};
