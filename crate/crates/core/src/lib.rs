//! Electron-spin decoherence of dilute dopants in a fluorite host: bath
//! generation, cluster-correlation-expansion echo simulation, analytic
//! spectral-diffusion models and least-squares fitting.

pub mod cce;
pub mod cli;
pub mod config;
pub mod constants;
pub mod crystal;
pub mod diffusion_model;
pub mod error;
pub mod fitter;
pub mod hamiltonian;
pub mod rng;
pub mod sequences;

pub use error::{Error, Result};
