//! Hybrid AC/VSC-HVDC electromechanical simulation, small-signal analysis and
//! design of reactive-power oscillation damping controllers for DC-segmented grids.

pub mod dynamics;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod hvdc;
pub mod io;
pub mod poddesign;
pub mod segment;
pub mod simcore;
pub mod smallsignal;
pub mod study;
pub mod suppctrl;

pub use error::{Error, Result};

/// Complex number type used for phasors and eigenvalues.
pub type C64 = nalgebra::Complex<f64>;
