//! Periodized method of fundamental solutions for acoustic scattering from
//! doubly-periodic multilayered media.

pub mod assembly;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod planar;
pub mod postprocess;
pub mod solver;

pub use assembly::*;
pub use error::{Error, Result};
pub use geometry::*;
pub use kernels::*;
pub use planar::*;
pub use postprocess::*;
pub use solver::*;
