//! Bootstrap toolkit for random Dirac-ensemble matrix models.

pub mod cli;
pub mod coeff;
pub mod dirac;
pub mod equilibrium;
pub mod error;
pub mod loops;
pub mod mc;
pub mod output;
pub mod positivity;
pub mod scan;
pub mod words;

pub use error::{Error, Result};
