//! Weight-condition toolkit and variational solver for the degenerate
//! weighted p-Laplacian with a concave-convex right-hand side.

pub mod cli;
pub mod config;
pub mod error;
pub mod functional;
pub mod grid;
pub mod linalg;
pub mod quasimetric;
pub mod solver;
pub mod sum;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
