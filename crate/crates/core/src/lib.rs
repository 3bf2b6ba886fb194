pub mod classical;
pub mod classifier;
pub mod data;
pub mod eval;
pub mod error;
pub mod imaging;
pub mod nn;
pub mod quantizer;

pub use error::{Error, Result};
