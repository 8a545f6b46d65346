//! Desk-scale toolkit for Kuranishi structures, multisections, CF-perturbations,
//! rational virtual chains in dimension zero and integration along the fibre.

pub mod bundle;
pub mod check;
pub mod error;
pub mod expr;
pub mod gallery;
pub mod integrate;
pub mod kuranishi;
pub mod map;
pub mod numeric;
pub mod orbifold;
pub mod perturbation;
pub mod report;
pub mod run;
pub mod scenario;
pub mod tol;
pub mod vfc;
pub mod zeros;

pub use error::{Error, Result};
