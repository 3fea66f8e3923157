//! Communication-efficient federated learning for traffic forecasting.
//!
//! The crate is `no_std` and only needs `alloc`. It contains the numerical
//! core of the simulator: a small MLP with hand-written backpropagation,
//! top-k gradient sparsification with error feedback, gradient tracking,
//! correlation-driven personalized aggregation and the FedAvg / FedProx
//! baselines. File formats, threading and the command line live in the
//! `fedgcc` crate.
//!
//! All transcendental functions go through [`libm`] so results are
//! bit-identical across platforms.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod aggregation;
pub mod compression;
pub mod data;
mod error;
pub mod federated;
pub mod metrics;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use model::{MlpModel, MlpShape, ParamVector};
pub use numerics::RngStream;
