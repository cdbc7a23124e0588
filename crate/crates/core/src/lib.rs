pub mod cli;
pub mod diagnostics;
pub mod dtn;
pub mod dynamics;
pub mod error;
pub mod grid;

pub use error::{Error, Result};
