pub mod cli;
pub mod config;
pub mod error;
pub mod euler;
pub mod evaluation;
pub mod fusion;
pub mod gasel;
pub mod imaging;
pub mod normalization;
pub mod pipeline;
pub mod segmentation;
pub mod store;
pub mod zerocross;

pub use error::{Error, Result};
