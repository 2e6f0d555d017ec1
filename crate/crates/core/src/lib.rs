//! Macroparticle solver for the spherically symmetric relativistic Vlasov-Maxwell system with
//! data on a past light cone, with conservation-law diagnostics and a finite-difference audit of
//! the characteristic constraint equations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod cli_io;
pub mod constraint_audit;
pub mod diagnostics;
pub mod error;
pub mod evolver;
pub mod phase_model;
pub mod radial_field;

#[cfg(test)]
mod test_oracles;

pub use error::{Error, Result};
