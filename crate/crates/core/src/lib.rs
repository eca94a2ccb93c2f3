pub mod cli;
pub mod climatology;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
