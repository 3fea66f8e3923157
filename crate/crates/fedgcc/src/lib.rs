//! Command-line simulator for communication-efficient federated traffic
//! forecasting, built on [`fedgcc_core`].
//!
//! This crate adds what the `no_std` core leaves out: traffic CSV files, a
//! JSON experiment configuration, a scoped-thread client executor, result
//! files and the `fedgcc` binary.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod executor;
pub mod report;

pub use error::{AppError, Result};
