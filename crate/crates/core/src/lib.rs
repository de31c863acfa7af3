//! Normalized multibump standing waves of the periodic nonlinear
//! Schrodinger equation.
//!
//! Solutions are built by Newton iteration on the extended Lagrangian
//! around superpositions of translated single bumps, then checked
//! spectrally (Morse indices, the z-vector sign test, the semiclassical
//! family and the linear instability eigenvalue).

pub mod dynamics;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod gluing;
pub mod model;
pub mod semiclassical;
pub mod spectra;
pub mod stationary;

pub use error::{Error, Result};
pub use grid::{Field, GridSpec};
pub use model::{Model, Nonlinearity, Potential, PotentialKind};

/// Version of this crate, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
