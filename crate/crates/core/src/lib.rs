//! Upper extremity reachable workspace (UERW) analysis from 3D keypoint
//! trajectories.
//!
//! The crate covers the whole pipeline: trajectory I/O, the anatomical torso
//! frame, target-sphere scoring, a pinhole camera, forward kinematics, the
//! implicit trajectory fitter, agreement statistics between two capture
//! systems, and a synthetic ground-truth generator used to validate all of it.

pub mod agreement;
pub mod camera;
pub mod cli;
pub mod error;
pub mod fitter;
pub mod kinematics;
pub mod report;
pub mod synth;
pub mod torso;
pub mod trajectory;
pub mod workspace;

pub use error::{Error, Result};
pub use nalgebra;
