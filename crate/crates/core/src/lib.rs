pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pseudolabel;
pub mod refiner;
pub mod sweep;
pub mod teacher;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
