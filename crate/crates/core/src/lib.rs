//! Neural Hamilton-Jacobi reachability with sup-norm residual training.
//!
//! The crate trains sine networks whose value function solves the
//! reachability variational inequality
//! `min{dV/dt + H(x, grad V), l(x) - V} = 0, V(T, x) = l(x)`,
//! solves the same problem on a dense grid with a Lax-Friedrichs scheme,
//! and compares the two.

pub mod analysis;
pub mod error;
pub mod gridoracle;
pub mod problem;
pub mod rollout;
pub mod sirennet;
pub mod training;

pub use error::{Error, Result};
