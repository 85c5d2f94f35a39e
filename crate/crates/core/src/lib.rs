pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod model;
pub mod training;

pub use error::{Error, Result};
