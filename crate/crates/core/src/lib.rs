//! Volumetric motion analysis: deformable registration of 3D image
//! sequences, marker tracking, online prediction, and image reconstruction.

pub mod config;
pub mod correspondence;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod optical_flow;
pub mod pipeline;
pub mod predictors;
pub mod synthetic;
pub mod tracking;
pub mod volume;

pub use error::{Error, Result};
