//! Finite metric measure spaces and the objects built on them: fragments, carrier-based
//! derivations, metric currents, Alberti representations, exterior powers of derivation
//! modules, strict-convexity renormings and normal-current approximation.
//!
//! Everything works on dense data of desk size (up to a few thousand points); local norms
//! and mass bounds are computed by small linear programs.

pub mod alberti;
pub mod approx;
pub mod cli;
pub mod currents;
pub mod derivations;
pub mod error;
pub mod exterior;
pub mod fixtures;
pub mod fragments;
pub mod io;
pub mod lp;
pub mod renorm;
pub mod space;

pub use error::{Error, ErrorKind, Result};
