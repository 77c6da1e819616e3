//! Hierarchical matrix LU arithmetic and task graph construction.
//!
//! The crate provides cluster and block trees ([`trees`]), H-matrix storage
//! with dense and low-rank leaves ([`hmatrix`]), the sequential recursive
//! arithmetic ([`arith`]) and its accumulator variant ([`accumulator`]),
//! task graphs built by iterative task and dependency refinement
//! ([`taskgraph`]), a dependency-counting executor ([`executor`]) and the
//! model problems used for experiments ([`problems`]). [`bench`] times
//! repeated builds and runs.

pub mod accumulator;
pub mod arith;
pub mod bench;
pub mod error;
pub mod executor;
pub mod hmatrix;
pub(crate) mod par;
pub mod problems;
pub mod taskgraph;
pub mod trees;

pub use error::{Error, Result};
