//! Physics-informed Gaussian-process reconstruction of blood flow on vessel
//! networks.
//!
//! The pipeline: a [`vasc_model::NetworkTopology`] is simulated by the 1D
//! [`solver`] for an ensemble of randomized parameters ([`ensemble`]); the
//! resulting snapshot matrix is compressed into a [`kernel::LowRankKernel`];
//! [`gp`] conditions that kernel on sparse measurements.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod gp;
pub mod grid;
pub mod kernel;
pub mod scenarios;
pub mod solver;
pub mod vasc_model;

pub use error::{Error, Result};
