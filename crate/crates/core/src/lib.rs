//! Core data model and processing stages for the in-cabin monitoring collector.

pub mod alignment;
pub mod error;
pub mod fusion;
pub mod model;
pub mod ocular;
pub mod persistence;
pub mod pipeline;
pub mod radar;
pub mod simulators;

pub use error::{Error, Result};
