//! Articulatory-phonology classification from aligned vocal-tract video and speech.

mod error;

pub mod alignment;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod experiment;
pub mod evaluation;
pub mod model;
pub mod phonology;
pub mod training;

pub use error::{Error, Result};
