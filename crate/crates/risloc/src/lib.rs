//! RIS-assisted NLOS indoor localization workbench.
//!
//! A base station illuminates reconfigurable intelligent surface (RIS) tiles
//! mounted on two walls; a user equipment (UE) in a non-line-of-sight region
//! receives the cascaded reflections. The library simulates that channel and
//! estimates the UE position three ways: maximum-likelihood direct
//! positioning via particle swarm optimization (PSO), a from-scratch
//! bidirectional LSTM regressor, and an LSTM-seeded PSO hybrid.

pub mod channel;
pub mod dataset;
pub mod direct;
pub mod error;
pub mod eval;
pub mod hybrid;
pub mod neural;
pub mod pso;
pub mod scene;

pub use error::{Error, Result};
