//! Numerical toolkit for first-order linear differential constraints
//! (`A`-free fields): wave cones, constant rank, laminates, rigidity,
//! `A`-quasiconvexity probes, and the compressible Euler instantiation.

pub mod error;
pub mod euler;
pub mod field;
pub mod functions;
pub mod linalg;
pub mod operator;
pub mod oscillation;
pub mod quasiconvexity;
pub mod report;
pub mod young;

pub use error::{Error, Result};
pub use operator::{LinearOperator, WaveConeVerdict};
