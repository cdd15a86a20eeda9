//! Generalized proximal point algorithms for convex splitting problems.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod linops;
pub mod ppa;
pub mod problems;
pub mod proxlib;
pub mod schemes;
