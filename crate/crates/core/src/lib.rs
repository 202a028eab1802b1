//! Solver core for a spatially distributed fragmentation-coagulation-
//! diffusion equation: periodic spectral diffusion per size, discrete
//! mass-conserving fragmentation and coagulation operators, a certified
//! hypothesis checker, and diagnostics for the provable consequences
//! (mass conservation, positivity, moment bounds, contractivity decay).

pub mod certificate;
pub mod checkpoint;
pub mod coagulation;
pub mod config;
pub mod diagnostics;
pub mod diffusion;
pub mod error;
pub mod fragmentation;
pub mod grid;
pub mod init;
pub mod integrator;
pub mod kernels;
pub mod logquad;
pub mod moments;
pub mod ndjson;

pub use error::{FragkinError, Result};
