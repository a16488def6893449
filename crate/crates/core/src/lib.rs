pub mod config;
pub mod distill;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod io;
pub mod similarity;
pub mod synthgen;
pub mod tensor;
pub mod whitening;

pub use error::{Error, Result};
pub use tensor::Matrix;
