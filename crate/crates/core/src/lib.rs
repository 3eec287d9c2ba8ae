pub mod error;
pub mod cli;
pub mod estimation;
pub mod experiments;
pub mod hris_model;
pub mod numkernel;
pub mod scenario;
pub mod sounding;

pub use error::{Error, Result};
