//! Multivariate shortfall risk: the minimal total cash `Σm_k` that makes a
//! vector of losses acceptable under `E[ℓ(X - m)] <= 0`, its optimal
//! allocation across components, sensitivities of that allocation, and a
//! clearing-house default-fund application.

pub mod cli;
pub mod defaultfund;
pub mod dist;
pub mod estimators;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod rng;
pub mod scenario;
pub mod sensitivity;
pub mod solver;

pub use error::{MsraError, Result};
