//! Uniform-lighting to underwater image translation: networks, losses,
//! training recipes, evaluation metrics and a command-line front end.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod nn;
pub mod objectives;
pub mod tensor;
pub mod train;

pub use config::{ContrastiveConfig, GanMode, Method, TrainConfig};
pub use error::{Error, Result};
pub use tensor::{DomainTag, ImageTensor, RawRaster, ValueRange};
