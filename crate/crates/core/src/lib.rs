//! Cavity-assisted energy relaxation of strongly correlated spin systems.
//!
//! All energies and rates are in units of the cavity decay rate κ.

pub mod error;
pub mod lindblad;
pub mod markov;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod presets;
pub mod sparse;
pub mod spin;
pub mod trajectory;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
