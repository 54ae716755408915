//! Interpretable choice models refined against a flexible neural reference by
//! ranking the residuals between them.

pub mod analytics;
pub mod dilemma;
pub mod error;
pub mod features;
pub mod io;
pub mod models;
pub mod srm;
pub mod synth;

pub use error::{Result, SrmError};
