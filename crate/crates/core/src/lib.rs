//! Matrix-free second-order two-timescale actor-critic methods.
//!
//! The crate provides native control environments, parametric policies with
//! exact scores and Hessian-vector products, a fast-timescale value critic,
//! implicit curvature operators (Fisher, outer-product, intrinsic, ACGN1,
//! ACGN2), conjugate-gradient Newton solvers with positive-definiteness
//! screening, the two-timescale training loop, and a brute-force oracle
//! suite that checks every curvature identity numerically.

pub mod critic;
pub mod curvature;
pub mod env;
pub mod error;
pub mod optim;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod serialize;
pub mod trainer;

pub use error::{Error, Result};

/// Flat real vector of policy or critic parameters.
pub type ParamVector = nalgebra::DVector<f64>;
