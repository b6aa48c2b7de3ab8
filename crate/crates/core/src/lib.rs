//! Limited-aperture inverse obstacle scattering for sound-soft obstacles in
//! two dimensions.

pub mod baselines;
pub mod config;
pub mod error;
pub mod eval;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod physics;
pub mod specfun;
pub mod train;

pub use error::{Error, Result};
