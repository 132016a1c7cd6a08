//! Nonlocal Allen-Cahn fronts: singular kernels, bistable traveling waves,
//! Green-Kubo coefficients, phase-field evolution and the sharp-interface limit.

pub mod bistable;
pub mod coefficients;
pub mod error;
pub mod front;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod nonlocal_op;
pub mod phasefield;
pub mod quad;
pub mod scaling;
pub mod sharp_interface;
pub mod traveling_wave;

pub use error::{Error, Result};
