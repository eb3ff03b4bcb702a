//! Data fusion collector: session lifecycle, ingestion, pipeline fan-out and
//! the HTTP control API.

pub mod api;
pub mod bus;
pub mod config;
pub mod error;
pub mod ingest;
pub mod service;
pub mod sim;

pub use error::{CollectorError, Result};
pub use service::Collector;
