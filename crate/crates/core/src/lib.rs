//! Numerical analysis of harmonic-map necks on long cylinders.

// `!(x < y)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod field;
pub mod geometry;
pub mod heatflow;
pub mod linalg;
pub mod neck;
pub mod obstruct;
pub mod output;
pub mod pipeline;
pub mod planes;
pub mod rational;

pub use error::{Error, Result};
pub use field::{CylinderGrid, FieldSample, Provenance};
pub use geometry::{AlgebraGenerator, TargetKind, TargetManifold};
pub use rational::{cylinder_sample, neck_diagnostics, RationalFamily};
