pub mod cli;
pub mod design;
pub mod error;
pub mod harness;
pub mod measurements;
pub mod priors;
pub mod quantum;
pub mod smc;
pub mod stats;

pub use error::{Result, TomographyError};
