//! Regional solar and wind power estimation from gridded weather maps.

pub mod cli;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod rng;
pub mod saliency;
pub mod tensor;

pub use error::{Error, Result};
