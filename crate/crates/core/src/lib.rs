pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod optim;
pub mod predict;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
