//! Monocular 3D human pose estimation from 2D joint evidence.
//!
//! A 3D pose is lifted from per-joint 2D score maps by retrieving nearest
//! neighbours from a normalized motion-capture database, refining the 2D
//! pose with a pictorial structure model conditioned on the retrieved poses,
//! and minimizing a projection / retrieval / anthropometric energy.

pub mod error;
pub mod eval;
pub mod lifter;
pub mod mocap;
pub mod psm;
pub mod skeleton;

pub use error::{Error, Result};
